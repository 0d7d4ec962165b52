#include "msa2/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include "msa2/nn.hpp"
#include "msa2/tensor.hpp"
#include "parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace msa2 {

namespace {

constexpr int kPlacementAttempts = 60;
constexpr int kScaleIterations = 40;

std::string shape_name(ShapeKind k) { return k == ShapeKind::ellipse ? "ellipse" : "blob"; }

ShapeKind parse_shape(const std::string& s) {
    if (s == "ellipse") return ShapeKind::ellipse;
    if (s == "blob") return ShapeKind::blob;
    throw ConfigError("unknown shape '" + s + "' (expected ellipse or blob)");
}

struct ShapeParams {
    ShapeKind kind = ShapeKind::ellipse;
    double cx = 0, cy = 0;
    double aspect = 1.0;
    double cos_a = 1.0, sin_a = 0.0;
    std::array<double, 3> amp{};
    std::array<double, 3> phase{};

    bool contains(double px, double py, double scale) const {
        const double dx = px - cx, dy = py - cy;
        const double u = (cos_a * dx + sin_a * dy) / scale;
        const double v = (-sin_a * dx + cos_a * dy) / (scale * aspect);
        const double r2 = u * u + v * v;
        if (kind == ShapeKind::ellipse) return r2 <= 1.0;
        const double phi = std::atan2(v, u);
        double radius = 1.0;
        for (int k = 0; k < 3; ++k) radius += amp[k] * std::cos((k + 2) * phi + phase[k]);
        return r2 <= radius * radius;
    }
};

ShapeParams draw_shape(const SyntheticSpec& spec, Rng& rng) {
    ShapeParams p;
    p.kind = spec.shapes[rng.index(spec.shapes.size())];
    const double s = spec.image_size;
    p.cx = rng.uniform(0.15, 0.85) * s;
    p.cy = rng.uniform(0.15, 0.85) * s;
    p.aspect = rng.uniform(0.55, 1.0);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    p.cos_a = std::cos(angle);
    p.sin_a = std::sin(angle);
    for (int k = 0; k < 3; ++k) {
        p.amp[k] = rng.uniform(0.0, 0.15);
        p.phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    return p;
}

// Pixels the shape would claim at this scale, or -1 if it touches an occupied
// pixel under the disjoint policy.
long count_claim(const ShapeParams& p, double scale, const LabelMap& mask, bool disjoint, std::vector<std::size_t>* out) {
    long count = 0;
    if (out) out->clear();
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!p.contains(x + 0.5, y + 0.5, scale)) continue;
            const std::size_t i = static_cast<std::size_t>(y) * mask.width + x;
            if (mask.labels[i] != 0) {
                if (disjoint) return -1;
                continue;
            }
            ++count;
            if (out) out->push_back(i);
        }
    return count;
}

void place_class(const SyntheticSpec& spec, LabelMap& mask, int cls, const AreaRange& range, Rng& rng) {
    const double total = static_cast<double>(mask.size());
    const long lo_px = static_cast<long>(std::ceil(range.lo * total - 1e-9));
    const long hi_px = static_cast<long>(std::floor(range.hi * total + 1e-9));
    const double target = rng.uniform(range.lo, range.hi) * total;
    const bool disjoint = spec.overlap == OverlapPolicy::disjoint;
    std::vector<std::size_t> claim;
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
        const ShapeParams p = draw_shape(spec, rng);
        double scale = std::sqrt(target / (std::numbers::pi * p.aspect));
        for (int it = 0; it < kScaleIterations; ++it) {
            const long n = count_claim(p, scale, mask, disjoint, nullptr);
            if (n < 0) break;
            if (n >= lo_px && n <= hi_px) {
                count_claim(p, scale, mask, disjoint, &claim);
                for (std::size_t i : claim) mask.labels[i] = static_cast<std::uint8_t>(cls);
                return;
            }
            // area grows roughly with scale^2; damp to avoid oscillating around a narrow window
            const double ratio = n == 0 ? 2.25 : target / static_cast<double>(n);
            scale *= std::clamp(std::pow(ratio, 0.45), 0.5, 1.6);
        }
    }
    throw DataError("cannot place class " + std::to_string(cls) + " with area in [" + std::to_string(range.lo) + ", " +
                    std::to_string(range.hi) + "] after " + std::to_string(kPlacementAttempts) + " attempts");
}

std::array<double, 3> class_color(int cls, int num_classes) {
    if (cls == 0) return {0.18, 0.2, 0.22};
    const double t = static_cast<double>(cls) / static_cast<double>(num_classes);
    return {0.35 + 0.6 * t, 0.85 - 0.5 * t, 0.4 + 0.45 * std::sin(3.0 * t)};
}

Image render(const SyntheticSpec& spec, const LabelMap& mask, Rng& rng) {
    const int C = spec.grayscale ? 1 : 3;
    Image im(mask.height, mask.width, C);
    const double gx = rng.uniform(-0.08, 0.08), gy = rng.uniform(-0.08, 0.08);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            const int cls = mask.at(y, x);
            const auto col = class_color(cls, spec.num_classes);
            const double shade = gx * (x / double(mask.width) - 0.5) + gy * (y / double(mask.height) - 0.5);
            const double grain = spec.noise * rng.normal();
            for (int c = 0; c < C; ++c) {
                const double base = spec.grayscale ? (col[0] + col[1] + col[2]) / 3.0 : col[c];
                const double v = std::clamp(base + shade + grain, 0.0, 1.0);
                im.at(y, x, c) = std::round(v * 255.0) / 255.0;  // what an 8-bit PNG stores
            }
        }
    return im;
}

std::string sample_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%04zu", index);
    return buf;
}

std::vector<std::string> default_class_names(int num_classes) {
    std::vector<std::string> names{"background"};
    for (int c = 1; c < num_classes; ++c) names.push_back("class" + std::to_string(c));
    return names;
}

}  // namespace

void SyntheticSpec::validate() const {
    if (image_size < 8) throw ConfigError("image_size must be >= 8");
    if (num_classes < 2 || num_classes > 256) throw ConfigError("num_classes must be in [2, 256]");
    if (static_cast<int>(class_areas.size()) != num_classes - 1)
        throw ConfigError("class_areas needs one range per foreground class (" + std::to_string(num_classes - 1) +
                          "), got " + std::to_string(class_areas.size()));
    double max_sum = 0.0;
    const double total = static_cast<double>(image_size) * image_size;
    for (const auto& r : class_areas) {
        if (!(r.lo > 0.0 && r.hi < 1.0 && r.lo <= r.hi))
            throw ConfigError("class area range must satisfy 0 < lo <= hi < 1");
        if (std::ceil(r.lo * total - 1e-9) > std::floor(r.hi * total + 1e-9))
            throw ConfigError("class area range holds no whole pixel count at this image size");
        max_sum += r.hi;
    }
    if (max_sum > 1.0 + 1e-12) throw ConfigError("sum of maximum class areas exceeds 1");
    if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes)
        throw ConfigError("class_names must list num_classes names");
    if (shapes.empty()) throw ConfigError("shapes must not be empty");
    if (noise < 0.0) throw ConfigError("noise must be >= 0");
    for (double r : split_ratios)
        if (r < 0.0) throw ConfigError("split ratios must be >= 0");
    if (split_ratios[0] + split_ratios[1] + split_ratios[2] <= 0.0) throw ConfigError("split ratios sum to 0");
}

std::vector<std::string> SyntheticSpec::resolved_class_names() const {
    return class_names.empty() ? default_class_names(num_classes) : class_names;
}

SyntheticSpec SyntheticSpec::small_objects(std::uint64_t seed) {
    SyntheticSpec s;
    s.num_classes = 3;
    s.class_areas = {{0.006, 0.03}, {0.012, 0.045}};
    s.class_names = {"background", "nodule", "vessel"};
    s.seed = seed;
    return s;
}

SyntheticSpec SyntheticSpec::large_objects(std::uint64_t seed) {
    SyntheticSpec s;
    s.num_classes = 3;
    s.class_areas = {{0.42, 0.5}, {0.41, 0.46}};
    s.class_names = {"background", "liver", "stomach"};
    s.seed = seed;
    return s;
}

void to_json(json& j, const SyntheticSpec& s) {
    json areas = json::array();
    for (const auto& r : s.class_areas) areas.push_back({r.lo, r.hi});
    json shapes = json::array();
    for (auto k : s.shapes) shapes.push_back(shape_name(k));
    j = json{{"image_size", s.image_size},
             {"num_classes", s.num_classes},
             {"class_areas", areas},
             {"class_names", s.resolved_class_names()},
             {"shapes", shapes},
             {"overlap_policy", s.overlap == OverlapPolicy::clip ? "clip" : "disjoint"},
             {"grayscale", s.grayscale},
             {"noise", s.noise},
             {"seed", s.seed},
             {"split_ratios", s.split_ratios}};
}

void from_json(const json& j, SyntheticSpec& s) {
    if (j.contains("preset")) {
        const std::string p = j.at("preset");
        const auto seed = j.value("seed", std::uint64_t{0});
        if (p == "small_objects")
            s = SyntheticSpec::small_objects(seed);
        else if (p == "large_objects")
            s = SyntheticSpec::large_objects(seed);
        else
            throw ConfigError("unknown preset '" + p + "'");
    }
    s.image_size = j.value("image_size", s.image_size);
    s.num_classes = j.value("num_classes", s.num_classes);
    if (j.contains("class_areas")) {
        s.class_areas.clear();
        for (const auto& r : j.at("class_areas")) s.class_areas.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    }
    if (j.contains("class_names")) s.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (j.contains("shapes")) {
        s.shapes.clear();
        for (const auto& k : j.at("shapes")) s.shapes.push_back(parse_shape(k.get<std::string>()));
    }
    if (j.contains("overlap_policy")) {
        const std::string o = j.at("overlap_policy");
        if (o == "clip")
            s.overlap = OverlapPolicy::clip;
        else if (o == "disjoint")
            s.overlap = OverlapPolicy::disjoint;
        else
            throw ConfigError("unknown overlap_policy '" + o + "'");
    }
    s.grayscale = j.value("grayscale", s.grayscale);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
    if (j.contains("split_ratios")) s.split_ratios = j.at("split_ratios").get<std::array<double, 3>>();
}

Sample generate_sample(const SyntheticSpec& spec, std::size_t index) {
    spec.validate();
    Rng rng(mix_seed(spec.seed, 1000 + index));
    Sample s;
    s.id = sample_id(index);
    s.mask = LabelMap(spec.image_size, spec.image_size);
    std::vector<int> order(spec.num_classes - 1);
    std::iota(order.begin(), order.end(), 1);
    // larger targets first so small classes fill the remaining space
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return spec.class_areas[a - 1].hi > spec.class_areas[b - 1].hi; });
    for (int cls : order) place_class(spec, s.mask, cls, spec.class_areas[cls - 1], rng);
    s.image = render(spec, s.mask, rng);
    return s;
}

Splits split_ids(std::vector<std::string> ids, const std::array<double, 3>& ratios, std::uint64_t seed) {
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0 || !(sum > 0.0))
        throw ConfigError("split ratios must be non-negative with a positive sum");
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DataError("duplicate sample ids");
    Rng rng(mix_seed(seed, 77));
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);

    const std::size_t n = ids.size();
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double exact = ratios[k] / sum * static_cast<double>(n);
        sizes[k] = static_cast<std::size_t>(std::floor(exact));
        frac[k] = exact - static_cast<double>(sizes[k]);
        assigned += sizes[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
    for (int k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++sizes[order[k]];

    Splits out;
    auto it = ids.begin();
    out.train.assign(it, it + sizes[0]);
    it += sizes[0];
    out.val.assign(it, it + sizes[1]);
    it += sizes[1];
    out.test.assign(it, ids.end());
    return out;
}

const std::vector<std::string>& DatasetManifest::split(const std::string& name) const {
    if (name == "train") return splits.train;
    if (name == "val") return splits.val;
    if (name == "test") return splits.test;
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<std::string> DatasetManifest::all_ids() const {
    std::vector<std::string> ids = splits.train;
    ids.insert(ids.end(), splits.val.begin(), splits.val.end());
    ids.insert(ids.end(), splits.test.begin(), splits.test.end());
    return ids;
}

DatasetManifest resplit(const DatasetManifest& manifest, const std::array<double, 3>& ratios, std::uint64_t seed) {
    DatasetManifest m = manifest;
    m.splits = split_ids(manifest.all_ids(), ratios, seed);
    return m;
}

json to_json(const DatasetManifest& m) {
    return json{{"num_classes", m.num_classes},
                {"class_names", m.class_names},
                {"pairing", "images/<id>.png -> masks/<id>.png"},
                {"splits", {{"train", m.splits.train}, {"val", m.splits.val}, {"test", m.splits.test}}}};
}

void save_manifest(const DatasetManifest& m) {
    std::ofstream out(m.root / "manifest.json", std::ios::binary);
    if (!out) throw DataError("cannot write " + (m.root / "manifest.json").string());
    out << to_json(m).dump(2) << '\n';
}

DatasetManifest generate_dataset(const SyntheticSpec& spec, std::size_t n, const fs::path& root) {
    spec.validate();
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    std::vector<std::string> ids(n);
    detail::parallel_for(n, [&](std::size_t i) {
        const Sample s = generate_sample(spec, i);
        write_image_png(root / "images" / (s.id + ".png"), s.image);
        write_mask_png(root / "masks" / (s.id + ".png"), s.mask);
        ids[i] = s.id;
    });
    DatasetManifest m;
    m.root = root;
    m.num_classes = spec.num_classes;
    m.class_names = spec.resolved_class_names();
    m.splits = split_ids(ids, spec.split_ratios, spec.seed);
    save_manifest(m);
    return m;
}

namespace {

DatasetManifest index_directory(const fs::path& root) {
    if (!fs::is_directory(root / "images")) throw DataError("no manifest.json or images/ directory under " + root.string());
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(root / "images"))
        if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
    int max_label = 1;
    for (const auto& id : ids) {
        const fs::path mp = root / "masks" / (id + ".png");
        if (!fs::exists(mp)) throw DataError("missing mask for " + id + ": " + mp.string());
        const LabelMap mask = read_mask_png(mp);
        for (auto v : mask.labels) max_label = std::max<int>(max_label, v);
    }
    DatasetManifest m;
    m.root = root;
    m.num_classes = max_label + 1;
    m.class_names = default_class_names(m.num_classes);
    m.splits.train = ids;
    return m;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
    fs::path file = path;
    if (fs::is_directory(path)) {
        file = path / "manifest.json";
        if (!fs::exists(file)) return index_directory(path);
    }
    std::ifstream in(file);
    if (!in) throw DataError("cannot open manifest " + file.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("corrupt manifest " + file.string() + ": " + e.what());
    }
    DatasetManifest m;
    m.root = file.parent_path();
    try {
        m.num_classes = j.at("num_classes");
        m.class_names = j.contains("class_names") ? j.at("class_names").get<std::vector<std::string>>()
                                                  : default_class_names(m.num_classes);
        const auto& s = j.at("splits");
        m.splits.train = s.value("train", std::vector<std::string>{});
        m.splits.val = s.value("val", std::vector<std::string>{});
        m.splits.test = s.value("test", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw DataError("invalid manifest " + file.string() + ": " + e.what());
    }
    if (m.num_classes < 2 || m.num_classes > 256) throw DataError("manifest num_classes must be in [2, 256]");
    if (static_cast<int>(m.class_names.size()) != m.num_classes)
        throw DataError("manifest class_names must list num_classes names");
    auto all = m.all_ids();
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) throw DataError("manifest splits overlap");
    for (const auto& id : all) {
        if (!fs::exists(m.image_path(id))) throw DataError("missing image for " + id + ": " + m.image_path(id).string());
        if (!fs::exists(m.mask_path(id))) throw DataError("missing mask for " + id + ": " + m.mask_path(id).string());
    }
    return m;
}

std::vector<Sample> load_samples(const DatasetManifest& m, const std::vector<std::string>& ids) {
    std::vector<Sample> out(ids.size());
    detail::parallel_for(ids.size(), [&](std::size_t i) {
        Sample& s = out[i];
        s.id = ids[i];
        if (!fs::exists(m.mask_path(s.id))) throw DataError("missing mask for " + s.id);
        s.image = read_image_png(m.image_path(s.id));
        s.mask = read_mask_png(m.mask_path(s.id));
        if (s.image.height != s.mask.height || s.image.width != s.mask.width)
            throw DataError("image/mask size mismatch for " + s.id + ": " + std::to_string(s.image.height) + "x" +
                            std::to_string(s.image.width) + " vs " + std::to_string(s.mask.height) + "x" +
                            std::to_string(s.mask.width));
        for (auto v : s.mask.labels)
            if (v >= m.num_classes)
                throw DataError("label " + std::to_string(v) + " in " + s.id + " out of range for " +
                                std::to_string(m.num_classes) + " classes");
    });
    return out;
}

std::vector<Sample> load_split(const DatasetManifest& m, const std::string& split) {
    return load_samples(m, m.split(split));
}

}  // namespace msa2
