#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "msa2/data.hpp"
#include "msa2/fingerprint.hpp"
#include "msa2/metrics.hpp"
#include "msa2/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace msa2;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<LabelMap> masks_of(const std::vector<Sample>& samples) {
    std::vector<LabelMap> out;
    for (const auto& s : samples) out.push_back(s.mask);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MSA2-Net: fingerprint-guided adaptive-kernel segmentation"};
    app.require_subcommand(1);

    // fingerprint
    auto* fp_cmd = app.add_subcommand("fingerprint", "Area-proportion fingerprint and candidate kernels of a dataset");
    std::string fp_data, fp_out, fp_split = "train";
    fp_cmd->add_option("--data", fp_data, "Dataset directory or manifest")->required();
    fp_cmd->add_option("--out", fp_out, "Output JSON file")->required();
    fp_cmd->add_option("--split", fp_split, "train, val, test or all")->check(CLI::IsMember({"train", "val", "test", "all"}));

    // train
    auto* tr_cmd = app.add_subcommand("train", "Train a model from a run config");
    std::string tr_config, tr_guidance, tr_out_dir;
    bool no_bridge = false, no_msadecoder = false, quiet = false;
    std::uint64_t tr_seed = 0;
    int tr_epochs = 0;
    tr_cmd->add_option("--config", tr_config, "Run config JSON")->required();
    tr_cmd->add_option("--guidance", tr_guidance, "Q1, Q2, Q3, None or SelfAdaptive");
    tr_cmd->add_flag("--no-bridge", no_bridge, "Disable the MSConvBridge");
    tr_cmd->add_flag("--no-msadecoder", no_msadecoder, "Use the plain upsampling decoder");
    auto* seed_opt = tr_cmd->add_option("--seed", tr_seed, "Random seed");
    tr_cmd->add_option("--epochs", tr_epochs, "Override the epoch count");
    tr_cmd->add_option("--out-dir", tr_out_dir, "Override the output directory");
    tr_cmd->add_flag("--quiet", quiet, "No per-epoch progress");

    // eval
    auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    std::string ev_ckpt, ev_data, ev_out, ev_split = "test", ev_mode, ev_hd = "percentile";
    ev_cmd->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
    ev_cmd->add_option("--data", ev_data, "Dataset directory or manifest")->required();
    ev_cmd->add_option("--out", ev_out, "Metric report JSON")->required();
    ev_cmd->add_option("--split", ev_split, "train, val, test or all")->check(CLI::IsMember({"train", "val", "test", "all"}));
    ev_cmd->add_option("--mode", ev_mode, "Kernel selection: hard or soft (default: from the checkpoint)");
    ev_cmd->add_option("--hd-mode", ev_hd, "percentile (HD95) or max (plain Hausdorff)")
        ->check(CLI::IsMember({"percentile", "max"}));

    // predict
    auto* pr_cmd = app.add_subcommand("predict", "Segment one image");
    std::string pr_ckpt, pr_image, pr_out, pr_probs, pr_mode;
    pr_cmd->add_option("--ckpt", pr_ckpt, "Checkpoint file")->required();
    pr_cmd->add_option("--image", pr_image, "Input PNG")->required();
    pr_cmd->add_option("--out", pr_out, "Output label PNG")->required();
    pr_cmd->add_option("--probs", pr_probs, "Also write float64 H x W x K probabilities (plus a .json sidecar)");
    pr_cmd->add_option("--mode", pr_mode, "Kernel selection: hard or soft");

    // report
    auto* rp_cmd = app.add_subcommand("report", "Kernel schedule and ablation summary of a checkpoint");
    std::string rp_ckpt, rp_json;
    rp_cmd->add_option("--ckpt", rp_ckpt, "Checkpoint file")->required();
    rp_cmd->add_option("--json", rp_json, "Also write the report as JSON");

    // plot-data
    auto* pd_cmd = app.add_subcommand("plot-data", "CSV series from a fingerprint (box plots) or training log (curves)");
    std::string pd_in, pd_out;
    pd_cmd->add_option("--in", pd_in, "Fingerprint JSON or training log CSV")->required();
    pd_cmd->add_option("--out", pd_out, "Output CSV")->required();

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "Write a synthetic dataset");
    std::string gen_out, gen_spec, gen_preset;
    std::size_t gen_n = 100;
    std::uint64_t gen_seed = 0;
    gen_cmd->add_option("--out", gen_out, "Dataset directory")->required();
    gen_cmd->add_option("--n", gen_n, "Number of samples");
    gen_cmd->add_option("--spec", gen_spec, "SyntheticSpec JSON");
    gen_cmd->add_option("--preset", gen_preset, "small_objects or large_objects")
        ->check(CLI::IsMember({"small_objects", "large_objects"}));
    auto* gen_seed_opt = gen_cmd->add_option("--seed", gen_seed, "Generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*fp_cmd) {
            const DatasetManifest m = load_manifest(fp_data);
            const auto ids = fp_split == "all" ? m.all_ids() : m.split(fp_split);
            const auto samples = load_samples(m, ids);
            const Fingerprint fp = fingerprint_dataset(masks_of(samples), m.num_classes, m.root.filename().string());
            json j = to_json(fp);
            j["class_names"] = m.class_names;
            write_text(fp_out, j.dump(2) + "\n");
            const auto& q = fp.pooled_quartiles;
            std::cout << "samples " << fp.sample_count << "  pooled [Q1 Q2 Q3 P95] = [" << q[0] << ' ' << q[1] << ' '
                      << q[2] << ' ' << q[3] << "]\n";
        } else if (*tr_cmd) {
            RunConfig cfg = load_run_config(tr_config);
            if (!tr_guidance.empty()) cfg.guidance = parse_guidance(tr_guidance);
            if (no_bridge) cfg.use_bridge = false;
            if (no_msadecoder) cfg.use_msadecoder = false;
            if (*seed_opt) cfg.seed = tr_seed;
            if (tr_epochs > 0) cfg.epochs = tr_epochs;
            if (!tr_out_dir.empty()) cfg.out_dir = tr_out_dir;
            const TrainResult r = train(cfg, quiet ? nullptr : &std::cout);
            std::cout << "best val_dice " << r.best.val_dice << " at epoch " << r.best.epoch << "; checkpoint "
                      << r.checkpoint_path.string() << "; log " << r.log_path.string() << '\n';
        } else if (*ev_cmd) {
            const LoadedCheckpoint ck = load_checkpoint(ev_ckpt);
            const DatasetManifest m = load_manifest(ev_data);
            if (m.num_classes != ck.model->config().num_classes)
                throw DataError("dataset has " + std::to_string(m.num_classes) + " classes, checkpoint " +
                                std::to_string(ck.model->config().num_classes));
            const auto samples = load_samples(m, ev_split == "all" ? m.all_ids() : m.split(ev_split));
            const SelectionMode mode = ev_mode.empty() ? ck.meta.run.eval_mode : parse_selection_mode(ev_mode);
            const auto preds = predict_labels(*ck.model, samples, mode);
            const MetricReport rep = evaluate(preds, masks_of(samples), m.num_classes, m.class_names,
                                              ev_hd == "max" ? HausdorffMode::maximum : HausdorffMode::percentile95);
            write_text(ev_out, to_json(rep).dump(2) + "\n");
            std::cout << format_table(rep);
        } else if (*pr_cmd) {
            const LoadedCheckpoint ck = load_checkpoint(pr_ckpt);
            const SelectionMode mode = pr_mode.empty() ? ck.meta.run.eval_mode : parse_selection_mode(pr_mode);
            const Image image = read_image_png(pr_image);
            const auto& enc = ck.model->config().encoder;
            if (image.height != enc.input_height || image.width != enc.input_width)
                throw DataError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                " but the model expects " + std::to_string(enc.input_height) + "x" +
                                std::to_string(enc.input_width));
            const SegmentationResult r = ck.model->predict(image, mode);
            write_mask_png(pr_out, r.labels);
            if (!pr_probs.empty()) {
                std::ofstream out(pr_probs, std::ios::binary);
                if (!out) throw DataError("cannot write " + pr_probs);
                out.write(reinterpret_cast<const char*>(r.probabilities.data()),
                          static_cast<std::streamsize>(r.probabilities.size() * sizeof(double)));
                json side{{"shape", {r.height, r.width, r.num_classes}},
                          {"dtype", "float64"},
                          {"byte_order", "little"},
                          {"class_names", ck.meta.class_names}};
                write_text(pr_probs + ".json", side.dump(2) + "\n");
            }
        } else if (*rp_cmd) {
            const LoadedCheckpoint ck = load_checkpoint(rp_ckpt);
            std::cout << format_report(ck);
            if (!rp_json.empty()) write_text(rp_json, report_json(ck).dump(2) + "\n");
        } else if (*pd_cmd) {
            const std::string text = read_text(pd_in);
            const auto first = text.find_first_not_of(" \t\r\n");
            std::string csv;
            if (first != std::string::npos && text[first] == '{') {
                json j;
                try {
                    j = json::parse(text);
                } catch (const json::exception& e) {
                    throw DataError("invalid fingerprint " + pd_in + ": " + e.what());
                }
                const auto names = j.value("class_names", std::vector<std::string>{});
                csv = plot_data_from_fingerprint(fingerprint_from_json(j), names);
            } else {
                csv = plot_data_from_log(text);
            }
            write_text(pd_out, csv);
        } else if (*gen_cmd) {
            SyntheticSpec spec;
            if (!gen_spec.empty()) {
                try {
                    spec = json::parse(read_text(gen_spec)).get<SyntheticSpec>();
                } catch (const json::exception& e) {
                    throw ConfigError("invalid spec " + gen_spec + ": " + e.what());
                }
            } else if (gen_preset == "large_objects") {
                spec = SyntheticSpec::large_objects();
            } else {
                spec = SyntheticSpec::small_objects();
            }
            if (*gen_seed_opt) spec.seed = gen_seed;
            const DatasetManifest m = generate_dataset(spec, gen_n, gen_out);
            std::cout << "wrote " << m.splits.size() << " samples to " << gen_out << " (train " << m.splits.train.size()
                      << ", val " << m.splits.val.size() << ", test " << m.splits.test.size() << ")\n";
        }
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "msa2net: error: " << msg << '\n';
        return 1;
    }
    return 0;
}
