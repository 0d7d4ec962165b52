#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "msa2/image.hpp"
#include "msa2/tensor.hpp"

namespace msa2 {

enum class ShapeKind { ellipse, blob };

// Pixels of a new object never overwrite earlier objects (clip), or a
// placement touching an earlier object is rejected and redrawn (disjoint).
enum class OverlapPolicy { clip, disjoint };

struct AreaRange {
    double lo = 0.0;
    double hi = 0.0;
};

struct SyntheticSpec {
    int image_size = 64;
    int num_classes = 3;                   // including background
    std::vector<AreaRange> class_areas;    // one per foreground class
    std::vector<std::string> class_names;  // num_classes entries; defaulted if empty
    std::vector<ShapeKind> shapes{ShapeKind::ellipse, ShapeKind::blob};
    OverlapPolicy overlap = OverlapPolicy::clip;
    bool grayscale = false;
    double noise = 0.08;  // std-dev of the per-pixel texture
    std::uint64_t seed = 0;
    std::array<double, 3> split_ratios{0.7, 0.1, 0.2};

    void validate() const;
    std::vector<std::string> resolved_class_names() const;

    // presets for kernel-adaptivity experiments
    static SyntheticSpec small_objects(std::uint64_t seed = 0);
    static SyntheticSpec large_objects(std::uint64_t seed = 0);
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

struct Sample {
    std::string id;
    Image image;
    LabelMap mask;
};

// One sample, fully determined by (spec, index). Throws DataError when the
// area targets cannot be met after bounded retries.
Sample generate_sample(const SyntheticSpec& spec, std::size_t index);

struct Splits {
    std::vector<std::string> train, val, test;
    std::size_t size() const { return train.size() + val.size() + test.size(); }
    bool operator==(const Splits&) const = default;
};

struct DatasetManifest {
    std::filesystem::path root;
    int num_classes = 2;
    std::vector<std::string> class_names;
    Splits splits;

    std::filesystem::path image_path(const std::string& id) const { return root / "images" / (id + ".png"); }
    std::filesystem::path mask_path(const std::string& id) const { return root / "masks" / (id + ".png"); }
    const std::vector<std::string>& split(const std::string& name) const;
    std::vector<std::string> all_ids() const;
};

// Shuffle with the seed, then cut by ratios (largest-remainder sizes).
Splits split_ids(std::vector<std::string> ids, const std::array<double, 3>& ratios, std::uint64_t seed);
DatasetManifest resplit(const DatasetManifest& manifest, const std::array<double, 3>& ratios, std::uint64_t seed);

// Writes root/images, root/masks and root/manifest.json.
DatasetManifest generate_dataset(const SyntheticSpec& spec, std::size_t n, const std::filesystem::path& root);

nlohmann::json to_json(const DatasetManifest& m);
void save_manifest(const DatasetManifest& m);
// `path` is a dataset directory or a manifest file. A directory without a
// manifest is indexed from images/ and masks/ with every item in train.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Reads and validates the listed items in order (parallel reads).
std::vector<Sample> load_samples(const DatasetManifest& m, const std::vector<std::string>& ids);
std::vector<Sample> load_split(const DatasetManifest& m, const std::string& split);

}  // namespace msa2
