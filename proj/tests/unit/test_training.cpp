#include <doctest.h>

#include <fstream>
#include <regex>
#include <sstream>

#include "gradcheck.hpp"
#include "msa2/optim.hpp"
#include "msa2/training.hpp"
#include "tempdir.hpp"

using namespace msa2;
using testing::random_tensor;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny_encoder() {
    EncoderConfig e;
    e.input_height = e.input_width = 32;
    e.stage_dims = {8, 16, 24, 32};
    e.blocks_per_stage = {1, 1, 0, 0};
    e.heads_per_stage = {2, 2, 2, 2};
    return e;
}

RunConfig tiny_run(const fs::path& data = {}) {
    RunConfig c;
    c.data = data.string();
    c.encoder = tiny_encoder();
    c.lr = 2e-3;
    c.epochs = 2;
    c.batch_size = 4;
    c.seed = 5;
    c.val_split = "train";
    return c;
}

SyntheticSpec tiny_spec() {
    SyntheticSpec s;
    s.image_size = 32;
    s.num_classes = 3;
    s.class_areas = {{0.05, 0.12}, {0.1, 0.2}};
    s.seed = 3;
    return s;
}

std::vector<Sample> samples(int n) {
    std::vector<Sample> out;
    for (int i = 0; i < n; ++i) out.push_back(generate_sample(tiny_spec(), static_cast<std::size_t>(i)));
    return out;
}

std::unique_ptr<Msa2Net> tiny_model(Guidance g = Guidance::SelfAdaptive) {
    ModelConfig mc;
    mc.encoder = tiny_encoder();
    mc.guidance = g;
    mc.seed = 9;
    return std::make_unique<Msa2Net>(mc, guidance_matrix(g, {0.05, 0.1, 0.3, 0.6}));
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("run config parsing and validation") {
    const RunConfig d;
    CHECK(d.lr == 1e-4);
    CHECK(d.epochs == 60);
    CHECK(d.batch_size == 8);
    CHECK(d.ce_weight == 0.5);
    CHECK(d.dice_weight == 0.5);
    CHECK(d.guidance == Guidance::SelfAdaptive);

    const nlohmann::json j = {{"data", "x"}, {"guidance", "Q2"}, {"use_bridge", false}, {"epochs", 3},
                              {"encoder", {{"input_size", 96}}}, {"eval_mode", "soft"}};
    const auto c = j.get<RunConfig>();
    CHECK(c.guidance == Guidance::Q2);
    CHECK_FALSE(c.use_bridge);
    CHECK(c.epochs == 3);
    CHECK(c.encoder.input_height == 96);
    CHECK(c.eval_mode == SelectionMode::soft);
    const nlohmann::json back = c;
    CHECK(back.get<RunConfig>().epochs == 3);

    CHECK_THROWS_AS((nlohmann::json{{"learning_rate", 0.1}}.get<RunConfig>()), ConfigError);
    CHECK_THROWS_AS((nlohmann::json{{"guidance", "Q9"}}.get<RunConfig>()), ConfigError);
    CHECK_THROWS_AS((nlohmann::json{{"epochs", "many"}}.get<RunConfig>()), ConfigError);
    for (auto mutate : std::vector<void (*)(RunConfig&)>{
             [](RunConfig& r) { r.lr = 0.0; }, [](RunConfig& r) { r.batch_size = 0; },
             [](RunConfig& r) { r.optimizer = "sgd"; }, [](RunConfig& r) { r.val_split = "dev"; },
             [](RunConfig& r) { r.ce_weight = r.dice_weight = 0.0; }}) {
        RunConfig r;
        mutate(r);
        CHECK_THROWS_AS(r.validate(), ConfigError);
    }

    TempDir dir("cfg");
    std::ofstream(dir / "bad.json") << "{ nope";
    CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
    CHECK_THROWS_AS(load_run_config(dir / "absent.json"), ConfigError);
    std::ofstream(dir / "ok.json") << R"({"data": "d", "lr": 0.01})";
    CHECK(load_run_config(dir / "ok.json").lr == 0.01);
}

TEST_CASE("checkpoint round trip is bit-identical") {
    TempDir dir("ckpt");
    auto model = tiny_model();
    // move away from the initial state, including selection logits
    ParamList params = model->parameters();
    AdamW opt(params, {0.01, 0.0});
    Rng rng(1);
    const auto data = samples(2);
    for (int step = 0; step < 2; ++step) {
        opt.zero_grad();
        std::vector<std::uint8_t> labels;
        for (const auto& s : data) labels.insert(labels.end(), s.mask.labels.begin(), s.mask.labels.end());
        const Var logits = model->forward(Var(stack_images(std::vector<Image>{data[0].image, data[1].image})),
                                          SelectionMode::soft);
        backward(ops::segmentation_loss(logits, labels, 0.5, 0.5));
        opt.step();
    }
    CheckpointMeta meta{tiny_run(), {"background", "a", "b"}, 4, {3, 0.75, 2.5}};
    save_checkpoint(dir / "m.ckpt", *model, meta);
    const LoadedCheckpoint back = load_checkpoint(dir / "m.ckpt");

    const Tensor probe = random_tensor({2, 32, 32, 3}, rng);
    for (auto mode : {SelectionMode::soft, SelectionMode::hard}) {
        const Tensor a = model->probabilities(probe, mode), b = back.model->probabilities(probe, mode);
        CHECK(max_abs_diff(a, b) == 0.0);
    }
    CHECK(back.meta.epoch == 4);
    CHECK(back.meta.best.epoch == 3);
    CHECK(back.meta.best.val_dice == 0.75);
    CHECK(*back.meta.best.val_hd95 == 2.5);
    CHECK(back.meta.class_names == meta.class_names);
    CHECK(back.model->matrix() == model->matrix());
    CHECK(kernel_schedule(*back.model) == kernel_schedule(*model));
    CHECK(back.meta.run.lr == meta.run.lr);

    // pinned schedules survive reload
    auto pinned = tiny_model(Guidance::None);
    save_checkpoint(dir / "p.ckpt", *pinned, meta);
    const auto pinned_back = load_checkpoint(dir / "p.ckpt");
    for (const auto& p : pinned_back.model->parameters())
        if (p.name.ends_with(".logits")) CHECK_FALSE(p.trainable);
}

TEST_CASE("corrupt checkpoints are rejected") {
    TempDir dir("corrupt");
    save_checkpoint(dir / "m.ckpt", *tiny_model(), {tiny_run(), {"background", "a", "b"}, 1, {}});
    const std::string good = slurp(dir / "m.ckpt");
    auto write = [&](const std::string& bytes) { std::ofstream(dir / "x.ckpt", std::ios::binary) << bytes; };

    write(good.substr(0, good.size() - 8));
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "x.ckpt"), doctest::Contains("corrupt checkpoint"), DataError);
    std::string flipped = good;
    flipped[flipped.size() - 3] ^= 0x40;
    write(flipped);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "x.ckpt"), doctest::Contains("checksum"), DataError);
    write("MSA2CKPX" + good.substr(8));
    CHECK_THROWS_AS(load_checkpoint(dir / "x.ckpt"), DataError);
    write(good + "extra");
    CHECK_THROWS_AS(load_checkpoint(dir / "x.ckpt"), DataError);
    write("");
    CHECK_THROWS_AS(load_checkpoint(dir / "x.ckpt"), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
}

TEST_CASE("fixed seeds reproduce the training log") {
    TempDir dir("seed");
    const auto data = samples(6);
    const std::vector<std::string> names{"background", "a", "b"};
    auto m1 = tiny_model(), m2 = tiny_model();
    const auto r1 = fit(*m1, data, {}, tiny_run(), names, dir / "a");
    const auto r2 = fit(*m2, data, {}, tiny_run(), names, dir / "b");
    CHECK(r1.steps == 4);
    CHECK(slurp(dir / "a/log.csv") == slurp(dir / "b/log.csv"));
    CHECK(fs::exists(dir / "a/best.ckpt"));
    CHECK(fs::exists(dir / "a/last.ckpt"));

    std::istringstream log(slurp(dir / "a/log.csv"));
    std::string header, row;
    std::getline(log, header);
    CHECK(header == csv_header());
    int rows = 0;
    while (std::getline(log, row)) {
        ++rows;
        CHECK(row.find("\"Stage1=[") != std::string::npos);
    }
    CHECK(rows == 2);

    auto m3 = tiny_model();
    auto other = tiny_run();
    other.seed = 6;
    fit(*m3, data, {}, other, names, dir / "c");
    CHECK(slurp(dir / "a/log.csv") != slurp(dir / "c/log.csv"));

    auto capped = tiny_run();
    capped.max_steps = 3;
    auto m4 = tiny_model();
    CHECK(fit(*m4, data, {}, capped, names).steps == 3);
    CHECK_THROWS_AS(fit(*m4, {}, {}, capped, names), DataError);
}

TEST_CASE("fixed guidance training leaves selection logits untouched") {
    const auto data = samples(4);
    for (auto g : {Guidance::Q1, Guidance::Q2, Guidance::Q3, Guidance::None, Guidance::SelfAdaptive}) {
        auto model = tiny_model(g);
        std::vector<Tensor> before;
        for (const auto& p : model->parameters())
            if (p.name.ends_with(".logits")) before.push_back(p.var.value());
        auto cfg = tiny_run();
        cfg.epochs = 1;
        fit(*model, data, {}, cfg, {"background", "a", "b"});
        double change = 0.0;
        std::size_t i = 0;
        for (const auto& p : model->parameters())
            if (p.name.ends_with(".logits")) change += max_abs_diff(p.var.value(), before[i++]);
        if (g == Guidance::SelfAdaptive)
            CHECK(change > 0.0);
        else
            CHECK(change == 0.0);
    }
}

TEST_CASE("evaluating perfect predictions gives unit dice") {
    const auto data = samples(3);
    std::vector<LabelMap> truth;
    for (const auto& s : data) truth.push_back(s.mask);
    const auto rep = evaluate(truth, truth, 3);
    CHECK(rep.mean_dice == 1.0);
    CHECK(*rep.mean_hd95 == 0.0);
}

TEST_CASE("plot data") {
    const std::vector<double> a{0.1, 0.4, 0.2, 0.3}, b{0.05, 0.06}, c{0.5};
    Fingerprint fp;
    fp.dataset_id = "three";
    fp.per_class_samples = {{1, a}, {2, b}, {3, c}};
    const std::string csv = plot_data_from_fingerprint(fp, {"bg", "liver", "kidney", "spleen"});
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "class_id,class_name,n,min,q1,median,q3,max,p95");
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    REQUIRE(rows.size() == 3);
    const auto qa = quartile_stats(a);
    std::ostringstream expect;
    expect.precision(17);
    expect << "1,liver,4," << 0.1 << ',' << qa[0] << ',' << qa[1] << ',' << qa[2] << ',' << 0.4 << ',' << qa[3];
    CHECK(rows[0] == expect.str());
    CHECK(rows[2].starts_with("3,spleen,1,0.5,0.5,0.5,0.5,0.5,0.5"));

    const std::string log = csv_header() + "\n1,0.5,0.25,,\"Stage1=[1,1,1,1]\"\n2,0.25,0.5,3.5,\"Stage1=[1,3,1,1]\"\n";
    const std::string curves = plot_data_from_log(log);
    CHECK(curves == "epoch,loss,val_dice,val_hd95\n1,0.5,0.25,\n2,0.25,0.5,3.5\n");
    CHECK_THROWS_AS(plot_data_from_log(""), DataError);
    CHECK_THROWS_AS(plot_data_from_log("epoch,loss\n1,2\n"), DataError);
}

TEST_CASE("end-to-end train and report") {
    TempDir dir("e2e");
    generate_dataset(tiny_spec(), 10, dir / "ds");
    auto cfg = tiny_run(dir / "ds");
    cfg.out_dir = (dir / "run").string();
    cfg.val_split = "val";
    const TrainResult r = train(cfg);
    CHECK(fs::exists(dir / "run/config.json"));
    CHECK(fs::exists(dir / "run/fingerprint.json"));
    CHECK(r.log.size() == 2);

    const LoadedCheckpoint ck = load_checkpoint(r.checkpoint_path);
    const std::string text = format_report(ck);
    for (const char* row : {"Stage1", "Stage2", "Stage3", "MSConvBridge", "Ablation"})
        CHECK(text.find(row) != std::string::npos);
    // summary row: switches, then Dice and HD95 as separate two-decimal columns
    CHECK(std::regex_search(text, std::regex(R"(\non +on +\d+\.\d\d +(\d+\.\d\d|n/a)\n)")));
    const auto j = report_json(ck);
    const auto& sched = j.at("kernel_schedule");
    CHECK(sched.at("msadecoder").size() == 3);
    for (const char* st : {"Stage1", "Stage2", "Stage3"}) CHECK(sched.at("msadecoder").at(st).size() == 4);
    CHECK(sched.at("msconv_bridge").size() == 4);
    CHECK(j.at("ablation").at("use_bridge") == true);

    auto ablated = cfg;
    ablated.use_bridge = ablated.use_msadecoder = false;
    ablated.out_dir = (dir / "bare").string();
    const TrainResult rb = train(ablated);
    const std::string bare = format_report(load_checkpoint(rb.checkpoint_path));
    CHECK(bare.find("Stage1") == std::string::npos);
    CHECK(bare.find("off") != std::string::npos);
}

TEST_CASE("shipped configs parse and validate") {
    int n = 0;
    for (const auto& e : fs::directory_iterator(MSA2_CONFIG_DIR)) {
        if (e.path().extension() != ".json") continue;
        CAPTURE(e.path().string());
        CHECK_NOTHROW(load_run_config(e.path()).validate());
        ++n;
    }
    CHECK(n >= 2);
}
