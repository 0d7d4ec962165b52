#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "msa2/data.hpp"
#include "msa2/metrics.hpp"
#include "msa2/model.hpp"

namespace msa2 {

// Flat JSON run description; keys match the field names.
struct RunConfig {
    std::string data;                  // dataset directory or manifest file
    std::string fingerprint = "auto";  // "auto" computes it from the train split
    Guidance guidance = Guidance::SelfAdaptive;
    bool use_bridge = true;
    bool use_msadecoder = true;
    EncoderConfig encoder;
    std::string optimizer = "adamw";
    double lr = 1e-4;
    double weight_decay = 1e-4;
    int epochs = 60;
    int batch_size = 8;
    std::uint64_t seed = 0;
    double ce_weight = 0.5;
    double dice_weight = 0.5;
    long max_steps = 0;              // 0: no cap
    std::string val_split = "val";   // falls back to train when empty
    SelectionMode eval_mode = SelectionMode::hard;
    std::string out_dir = "runs/msa2";

    void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

std::string to_string(SelectionMode m);
SelectionMode parse_selection_mode(const std::string& s);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Kernel size chosen at every adaptive site. Decoder rows are MSADecoder
// stages (Stage1 = deepest), each listing its four groups; the bridge row
// lists its four stages; encoder lists the auxiliary branch of each stage.
struct KernelSchedule {
    Guidance guidance = Guidance::SelfAdaptive;
    std::optional<std::array<std::array<int, 4>, kDecoderStages>> decoder;
    std::optional<std::array<int, 4>> bridge;
    std::array<int, 4> encoder{};
    bool operator==(const KernelSchedule&) const = default;
};

KernelSchedule kernel_schedule(const Msa2Net& model);
std::string compact_string(const KernelSchedule& s);  // single line, no commas outside brackets
nlohmann::json to_json(const KernelSchedule& s);

struct BestRecord {
    int epoch = 0;
    double val_dice = -1.0;
    std::optional<double> val_hd95;
};

struct CheckpointMeta {
    RunConfig run;
    std::vector<std::string> class_names;
    int epoch = 0;
    BestRecord best;
};

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::unique_ptr<Msa2Net> model;
};

void save_checkpoint(const std::filesystem::path& path, const Msa2Net& model, const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double val_dice = 0.0;
    std::optional<double> val_hd95;
    std::string selected_kernels;
};

std::string csv_header();
std::string csv_row(const EpochLog& row);

struct TrainResult {
    std::vector<EpochLog> log;
    BestRecord best;
    long steps = 0;
    Fingerprint fingerprint;
    std::unique_ptr<Msa2Net> model;  // state after the last step
    std::filesystem::path checkpoint_path;
    std::filesystem::path log_path;
};

// Full pipeline: load data, fingerprint, build, optimise, log, checkpoint.
TrainResult train(const RunConfig& config, std::ostream* progress = nullptr);

// Optimisation loop on in-memory samples. Writes nothing when out_dir is empty.
TrainResult fit(Msa2Net& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                const RunConfig& config, const std::vector<std::string>& class_names,
                const std::filesystem::path& out_dir = {}, std::ostream* progress = nullptr);

std::vector<LabelMap> predict_labels(const Msa2Net& model, const std::vector<Sample>& samples, SelectionMode mode,
                                     int batch_size = 8);
MetricReport evaluate_model(const Msa2Net& model, const std::vector<Sample>& samples, SelectionMode mode,
                            const std::vector<std::string>& class_names);

// Text for `report`: kernel schedule table plus an ablation summary row.
std::string format_report(const LoadedCheckpoint& ckpt);
nlohmann::json report_json(const LoadedCheckpoint& ckpt);

// CSV series for plotting. A fingerprint yields one box-plot row per class;
// a training log yields loss / val_dice / val_hd95 curves.
std::string plot_data_from_fingerprint(const Fingerprint& fp, const std::vector<std::string>& class_names = {});
std::string plot_data_from_log(const std::string& csv_text);

}  // namespace msa2
