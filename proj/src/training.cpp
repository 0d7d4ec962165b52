#include "msa2/training.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "msa2/ops.hpp"
#include "msa2/optim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace msa2 {

// ---- configuration -------------------------------------------------------

std::string to_string(SelectionMode m) { return m == SelectionMode::soft ? "soft" : "hard"; }

SelectionMode parse_selection_mode(const std::string& s) {
    if (s == "soft") return SelectionMode::soft;
    if (s == "hard") return SelectionMode::hard;
    throw ConfigError("unknown eval_mode '" + s + "' (expected soft or hard)");
}

void RunConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    if (optimizer != "adamw") throw ConfigError("unsupported optimizer '" + optimizer + "' (only adamw)");
    if (ce_weight < 0.0 || dice_weight < 0.0 || ce_weight + dice_weight <= 0.0)
        throw ConfigError("loss weights must be non-negative and not both zero");
    if (val_split != "train" && val_split != "val" && val_split != "test")
        throw ConfigError("val_split must be train, val or test");
    encoder.validate();
}

void to_json(json& j, const RunConfig& c) {
    j = json{{"data", c.data},
             {"fingerprint", c.fingerprint},
             {"guidance", to_string(c.guidance)},
             {"use_bridge", c.use_bridge},
             {"use_msadecoder", c.use_msadecoder},
             {"encoder", c.encoder},
             {"optimizer", c.optimizer},
             {"lr", c.lr},
             {"weight_decay", c.weight_decay},
             {"epochs", c.epochs},
             {"batch_size", c.batch_size},
             {"seed", c.seed},
             {"ce_weight", c.ce_weight},
             {"dice_weight", c.dice_weight},
             {"max_steps", c.max_steps},
             {"val_split", c.val_split},
             {"eval_mode", to_string(c.eval_mode)},
             {"out_dir", c.out_dir}};
}

void from_json(const json& j, RunConfig& c) {
    static const std::set<std::string> known{"data",       "fingerprint", "guidance",  "use_bridge",  "use_msadecoder",
                                             "encoder",    "optimizer",   "lr",        "weight_decay", "epochs",
                                             "batch_size", "seed",        "ce_weight", "dice_weight", "max_steps",
                                             "val_split",  "eval_mode",   "out_dir"};
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("unknown run config key '" + key + "'");
    c = RunConfig{};
    try {
        c.data = j.value("data", c.data);
        c.fingerprint = j.value("fingerprint", c.fingerprint);
        if (j.contains("guidance")) c.guidance = parse_guidance(j.at("guidance").get<std::string>());
        c.use_bridge = j.value("use_bridge", c.use_bridge);
        c.use_msadecoder = j.value("use_msadecoder", c.use_msadecoder);
        if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
        c.optimizer = j.value("optimizer", c.optimizer);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.seed = j.value("seed", c.seed);
        c.ce_weight = j.value("ce_weight", c.ce_weight);
        c.dice_weight = j.value("dice_weight", c.dice_weight);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.val_split = j.value("val_split", c.val_split);
        if (j.contains("eval_mode")) c.eval_mode = parse_selection_mode(j.at("eval_mode").get<std::string>());
        c.out_dir = j.value("out_dir", c.out_dir);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    RunConfig c = j.get<RunConfig>();
    c.validate();
    return c;
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"encoder", c.encoder},       {"num_classes", c.num_classes},
             {"guidance", to_string(c.guidance)}, {"use_bridge", c.use_bridge},
             {"use_msadecoder", c.use_msadecoder}, {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
    c.encoder = j.at("encoder").get<EncoderConfig>();
    c.num_classes = j.at("num_classes");
    c.guidance = parse_guidance(j.at("guidance").get<std::string>());
    c.use_bridge = j.at("use_bridge");
    c.use_msadecoder = j.at("use_msadecoder");
    c.seed = j.at("seed");
}

// ---- kernel schedule -----------------------------------------------------

KernelSchedule kernel_schedule(const Msa2Net& model) {
    KernelSchedule s;
    s.guidance = model.config().guidance;
    for (int i = 0; i < 4; ++i) s.encoder[i] = model.encoder.stages[i].aux.conv.selected_kernel().kernel_size;
    if (model.msconv_bridge) {
        std::array<int, 4> b{};
        for (int i = 0; i < 4; ++i) b[i] = model.msconv_bridge->stages[i].adaptive.selected_kernel().kernel_size;
        s.bridge = b;
    }
    if (model.decoder.multi_scale()) {
        std::array<std::array<int, 4>, kDecoderStages> d{};
        for (int st = 0; st < kDecoderStages; ++st) {
            const auto choices = model.decoder.stages[st].selected_kernels();
            for (int g = 0; g < kDecoderGroups; ++g) d[st][g] = choices[g].kernel_size;
        }
        s.decoder = d;
    }
    return s;
}

namespace {

std::string vec_str(const std::array<int, 4>& v) {
    std::ostringstream os;
    os << '[' << v[0] << ',' << v[1] << ',' << v[2] << ',' << v[3] << ']';
    return os.str();
}

}  // namespace

std::string compact_string(const KernelSchedule& s) {
    std::ostringstream os;
    if (s.decoder)
        for (int st = 0; st < kDecoderStages; ++st) os << "Stage" << st + 1 << '=' << vec_str((*s.decoder)[st]) << ' ';
    if (s.bridge) os << "Bridge=" << vec_str(*s.bridge) << ' ';
    os << "Encoder=" << vec_str(s.encoder);
    return os.str();
}

json to_json(const KernelSchedule& s) {
    json j{{"guidance", to_string(s.guidance)}, {"encoder", s.encoder}};
    if (s.decoder) {
        json d = json::object();
        for (int st = 0; st < kDecoderStages; ++st) d["Stage" + std::to_string(st + 1)] = (*s.decoder)[st];
        j["msadecoder"] = d;
    } else {
        j["msadecoder"] = nullptr;
    }
    j["msconv_bridge"] = s.bridge ? json(*s.bridge) : json(nullptr);
    return j;
}

// ---- checkpoint ----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'S', 'A', '2', 'C', 'K', 'P', 'T'};
constexpr int kFormatVersion = 1;

std::uint64_t fnv1a(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

json best_json(const BestRecord& b) {
    return {{"epoch", b.epoch}, {"val_dice", b.val_dice}, {"val_hd95", b.val_hd95 ? json(*b.val_hd95) : json(nullptr)}};
}

BestRecord best_from_json(const json& j) {
    BestRecord b;
    b.epoch = j.at("epoch");
    b.val_dice = j.at("val_dice");
    if (!j.at("val_hd95").is_null()) b.val_hd95 = j.at("val_hd95").get<double>();
    return b;
}

}  // namespace

void save_checkpoint(const fs::path& path, const Msa2Net& model, const CheckpointMeta& meta) {
    const ParamList params = model.parameters();
    json table = json::array();
    std::vector<double> blob;
    for (const auto& p : params) {
        table.push_back({{"name", p.name}, {"shape", p.var.shape()}, {"offset", blob.size()}});
        const auto v = p.var.value().values();
        blob.insert(blob.end(), v.begin(), v.end());
    }
    json header{{"format_version", kFormatVersion},
                {"byte_order", "little"},
                {"run_config", meta.run},
                {"model_config", model.config()},
                {"class_names", meta.class_names},
                {"candidate_matrix", to_json(model.matrix())},
                {"epoch", meta.epoch},
                {"best", best_json(meta.best)},
                {"params", table},
                {"blob_doubles", blob.size()},
                {"checksum", fnv1a(blob.data(), blob.size() * sizeof(double))}};
    const std::string text = header.dump();
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint " + path.string());
        const std::uint64_t len = text.size();
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(double)));
        if (!out) throw DataError("short write on checkpoint " + path.string());
    }
    fs::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    const auto corrupt = [&](const std::string& why) { return DataError("corrupt checkpoint " + path.string() + ": " + why); };
    char magic[8];
    std::uint64_t len = 0;
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw corrupt("bad magic");
    if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1ULL << 32)) throw corrupt("bad header length");
    std::string text(len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw corrupt("truncated header");

    LoadedCheckpoint out;
    json header;
    ModelConfig mc;
    KernelCandidateMatrix matrix;
    std::vector<double> blob;
    try {
        header = json::parse(text);
        if (header.at("format_version") != kFormatVersion) throw corrupt("unsupported format version");
        out.meta.run = header.at("run_config").get<RunConfig>();
        out.meta.class_names = header.at("class_names").get<std::vector<std::string>>();
        out.meta.epoch = header.at("epoch");
        out.meta.best = best_from_json(header.at("best"));
        mc = header.at("model_config").get<ModelConfig>();
        matrix = candidate_matrix_from_json(header.at("candidate_matrix"));
        blob.resize(header.at("blob_doubles").get<std::size_t>());
    } catch (const json::exception& e) {
        throw corrupt(e.what());
    } catch (const ConfigError& e) {
        throw corrupt(e.what());
    }
    if (!in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(double))))
        throw corrupt("truncated weights");
    if (in.peek() != std::char_traits<char>::eof()) throw corrupt("trailing bytes");
    if (fnv1a(blob.data(), blob.size() * sizeof(double)) != header.at("checksum").get<std::uint64_t>())
        throw corrupt("checksum mismatch");

    out.model = std::make_unique<Msa2Net>(mc, matrix);
    std::map<std::string, const json*> entries;
    for (const auto& e : header.at("params")) entries[e.at("name").get<std::string>()] = &e;
    const ParamList params = out.model->parameters();
    if (params.size() != entries.size()) throw corrupt("parameter count mismatch");
    for (const auto& p : params) {
        auto it = entries.find(p.name);
        if (it == entries.end()) throw corrupt("missing parameter " + p.name);
        const Shape shape = it->second->at("shape").get<Shape>();
        if (shape != p.var.shape()) throw corrupt("shape mismatch for " + p.name);
        const std::size_t off = it->second->at("offset");
        const std::size_t n = shape_numel(shape);
        if (off + n > blob.size()) throw corrupt("parameter " + p.name + " out of range");
        Var v = p.var;
        std::copy_n(blob.data() + off, n, v.mutable_value().data());
    }
    return out;
}

// ---- logs ----------------------------------------------------------------

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string csv_header() { return "epoch,loss,val_dice,val_hd95,selected_kernels"; }

std::string csv_row(const EpochLog& r) {
    return std::to_string(r.epoch) + ',' + num(r.loss) + ',' + num(r.val_dice) + ',' +
           (r.val_hd95 ? num(*r.val_hd95) : std::string()) + ",\"" + r.selected_kernels + '"';
}

// ---- training ------------------------------------------------------------

namespace {

void check_sizes(const std::vector<Sample>& samples, const EncoderConfig& enc) {
    for (const auto& s : samples)
        if (s.image.height != enc.input_height || s.image.width != enc.input_width)
            throw DataError("sample " + s.id + " is " + std::to_string(s.image.height) + "x" +
                            std::to_string(s.image.width) + " but the encoder expects " +
                            std::to_string(enc.input_height) + "x" + std::to_string(enc.input_width));
}

Tensor batch_images(const std::vector<Sample>& samples, std::span<const std::size_t> idx) {
    std::vector<Image> imgs;
    imgs.reserve(idx.size());
    for (auto i : idx) imgs.push_back(samples[i].image);
    return stack_images(imgs);
}

void write_log(const fs::path& path, const std::vector<EpochLog>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write log " + path.string());
    out << csv_header() << '\n';
    for (const auto& r : rows) out << csv_row(r) << '\n';
}

}  // namespace

std::vector<LabelMap> predict_labels(const Msa2Net& model, const std::vector<Sample>& samples, SelectionMode mode,
                                     int batch_size) {
    std::vector<LabelMap> out;
    out.reserve(samples.size());
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t b = 0; b < samples.size(); b += batch_size) {
        const std::size_t e = std::min(samples.size(), b + static_cast<std::size_t>(batch_size));
        const Tensor probs = model.probabilities(batch_images(samples, std::span(idx).subspan(b, e - b)), mode);
        for (std::size_t i = 0; i < e - b; ++i) out.push_back(make_result(probs, static_cast<int>(i)).labels);
    }
    return out;
}

MetricReport evaluate_model(const Msa2Net& model, const std::vector<Sample>& samples, SelectionMode mode,
                            const std::vector<std::string>& class_names) {
    const auto preds = predict_labels(model, samples, mode);
    std::vector<LabelMap> truth;
    truth.reserve(samples.size());
    for (const auto& s : samples) truth.push_back(s.mask);
    return evaluate(preds, truth, model.config().num_classes, class_names);
}

TrainResult fit(Msa2Net& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                const RunConfig& config, const std::vector<std::string>& class_names, const fs::path& out_dir,
                std::ostream* progress) {
    config.validate();
    if (train_set.empty()) throw DataError("training split is empty");
    check_sizes(train_set, model.config().encoder);
    check_sizes(val_set, model.config().encoder);
    const std::vector<Sample>& val = val_set.empty() ? train_set : val_set;

    TrainResult result;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        result.log_path = out_dir / "log.csv";
        result.checkpoint_path = out_dir / "best.ckpt";
    }
    AdamW opt(model.parameters(), {config.lr, config.weight_decay});
    Rng shuffle(mix_seed(config.seed, 3));
    std::vector<std::size_t> order(train_set.size());
    CheckpointMeta meta{config, class_names, 0, {}};

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.max_steps > 0 && result.steps >= config.max_steps) break;
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
            if (config.max_steps > 0 && result.steps >= config.max_steps) break;
            const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
            const auto idx = std::span(order).subspan(b, e - b);
            std::vector<std::uint8_t> labels;
            for (auto i : idx) labels.insert(labels.end(), train_set[i].mask.labels.begin(), train_set[i].mask.labels.end());
            opt.zero_grad();
            Var logits = model.forward(Var(batch_images(train_set, idx)), SelectionMode::soft);
            Var loss = ops::segmentation_loss(logits, labels, config.ce_weight, config.dice_weight);
            backward(loss);
            opt.step();
            loss_sum += loss.value()[0];
            ++batches;
            ++result.steps;
        }
        const MetricReport rep = evaluate_model(model, val, config.eval_mode, class_names);
        EpochLog row{epoch, loss_sum / batches, rep.mean_dice, rep.mean_hd95, compact_string(kernel_schedule(model))};
        result.log.push_back(row);
        meta.epoch = epoch;
        if (row.val_dice > result.best.val_dice) {
            result.best = {epoch, row.val_dice, row.val_hd95};
            meta.best = result.best;
            if (!out_dir.empty()) save_checkpoint(result.checkpoint_path, model, meta);
        }
        if (!out_dir.empty()) write_log(result.log_path, result.log);
        if (progress)
            *progress << "epoch " << epoch << " loss " << num(row.loss) << " val_dice " << row.val_dice << " val_hd95 "
                      << (row.val_hd95 ? std::to_string(*row.val_hd95) : std::string("n/a")) << " kernels "
                      << row.selected_kernels << std::endl;
    }
    opt.zero_grad();
    if (!out_dir.empty()) {
        meta.best = result.best;
        save_checkpoint(out_dir / "last.ckpt", model, meta);
    }
    return result;
}

TrainResult train(const RunConfig& config, std::ostream* progress) {
    config.validate();
    if (config.data.empty()) throw ConfigError("run config needs a 'data' path");
    const DatasetManifest manifest = load_manifest(config.data);
    const auto train_set = load_split(manifest, "train");
    const auto val_set = config.val_split == "train" ? std::vector<Sample>{} : load_split(manifest, config.val_split);

    Fingerprint fp;
    if (config.fingerprint == "auto") {
        std::vector<LabelMap> masks;
        for (const auto& s : train_set) masks.push_back(s.mask);
        fp = fingerprint_dataset(masks, manifest.num_classes, manifest.root.filename().string());
    } else {
        std::ifstream in(config.fingerprint);
        if (!in) throw DataError("cannot open fingerprint " + config.fingerprint);
        try {
            fp = fingerprint_from_json(json::parse(in));
        } catch (const json::exception& e) {
            throw DataError("invalid fingerprint " + config.fingerprint + ": " + e.what());
        }
    }

    ModelConfig mc;
    mc.encoder = config.encoder;
    mc.num_classes = manifest.num_classes;
    mc.guidance = config.guidance;
    mc.use_bridge = config.use_bridge;
    mc.use_msadecoder = config.use_msadecoder;
    mc.seed = config.seed;
    auto model = std::make_unique<Msa2Net>(mc, guidance_matrix(config.guidance, fp.pooled_quartiles));

    const fs::path out_dir = config.out_dir;
    fs::create_directories(out_dir);
    {
        std::ofstream(out_dir / "config.json") << json(config).dump(2) << '\n';
        std::ofstream(out_dir / "fingerprint.json") << to_json(fp).dump(2) << '\n';
    }
    TrainResult r = fit(*model, train_set, val_set, config, manifest.class_names, out_dir, progress);
    r.fingerprint = fp;
    r.model = std::move(model);
    return r;
}

// ---- report / plot data --------------------------------------------------

json report_json(const LoadedCheckpoint& ckpt) {
    const auto& cfg = ckpt.model->config();
    return {{"kernel_schedule", to_json(kernel_schedule(*ckpt.model))},
            {"ablation",
             {{"use_bridge", cfg.use_bridge},
              {"use_msadecoder", cfg.use_msadecoder},
              {"best", best_json(ckpt.meta.best)}}},
            {"candidate_matrix", to_json(ckpt.model->matrix())},
            {"epoch", ckpt.meta.epoch}};
}

std::string format_report(const LoadedCheckpoint& ckpt) {
    const KernelSchedule s = kernel_schedule(*ckpt.model);
    const auto& cfg = ckpt.model->config();
    std::ostringstream os;
    char line[160];
    os << "Kernel schedule (guidance " << to_string(s.guidance) << ")\n";
    std::snprintf(line, sizeof line, "%-16s%s\n", "Site", "Kernels");
    os << line;
    if (s.decoder)
        for (int st = 0; st < kDecoderStages; ++st) {
            std::snprintf(line, sizeof line, "%-16s%s\n", ("Stage" + std::to_string(st + 1)).c_str(),
                          vec_str((*s.decoder)[st]).c_str());
            os << line;
        }
    if (s.bridge) {
        std::snprintf(line, sizeof line, "%-16s%s\n", "MSConvBridge", vec_str(*s.bridge).c_str());
        os << line;
    }
    std::snprintf(line, sizeof line, "%-16s%s\n", "Encoder aux", vec_str(s.encoder).c_str());
    os << line << "\nAblation summary\n";
    std::snprintf(line, sizeof line, "%-14s%-12s%10s%10s\n", "MSConvBridge", "MSADecoder", "Dice", "HD95");
    os << line;
    const auto& b = ckpt.meta.best;
    char hd[32] = "n/a";
    if (b.val_hd95) std::snprintf(hd, sizeof hd, "%.2f", *b.val_hd95);
    std::snprintf(line, sizeof line, "%-14s%-12s%10.2f%10s\n", cfg.use_bridge ? "on" : "off",
                  cfg.use_msadecoder ? "on" : "off", 100.0 * std::max(0.0, b.val_dice), hd);
    os << line;
    os << "best epoch " << b.epoch << ", checkpoint from epoch " << ckpt.meta.epoch << '\n';
    return os.str();
}

std::string plot_data_from_fingerprint(const Fingerprint& fp, const std::vector<std::string>& class_names) {
    std::ostringstream os;
    os << "class_id,class_name,n,min,q1,median,q3,max,p95\n";
    for (const auto& [cls, samples] : fp.per_class_samples) {
        if (samples.empty()) continue;
        std::vector<double> sorted = samples;
        std::sort(sorted.begin(), sorted.end());
        const QuartileVector q = quartile_stats(sorted);
        const std::string name = cls < static_cast<int>(class_names.size()) ? class_names[cls] : "class" + std::to_string(cls);
        os << cls << ',' << name << ',' << sorted.size() << ',' << num(sorted.front()) << ',' << num(q[0]) << ','
           << num(q[1]) << ',' << num(q[2]) << ',' << num(sorted.back()) << ',' << num(q[3]) << '\n';
    }
    return os.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"')
            quoted = !quoted;
        else if (ch == ',' && !quoted)
            out.emplace_back();
        else if (ch != '\r')
            out.back() += ch;
    }
    return out;
}

}  // namespace

std::string plot_data_from_log(const std::string& csv_text) {
    std::istringstream in(csv_text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("training log is empty");
    const auto header = split_csv_line(line);
    const std::array<std::string, 4> wanted{"epoch", "loss", "val_dice", "val_hd95"};
    std::array<std::size_t, 4> col{};
    for (int k = 0; k < 4; ++k) {
        auto it = std::find(header.begin(), header.end(), wanted[k]);
        if (it == header.end()) throw DataError("training log lacks column '" + wanted[k] + "'");
        col[k] = static_cast<std::size_t>(it - header.begin());
    }
    std::ostringstream os;
    os << "epoch,loss,val_dice,val_hd95\n";
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size()) throw DataError("malformed training log row: " + line);
        os << f[col[0]] << ',' << f[col[1]] << ',' << f[col[2]] << ',' << f[col[3]] << '\n';
    }
    return os.str();
}

}  // namespace msa2
