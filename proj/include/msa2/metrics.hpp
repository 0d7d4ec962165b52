#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "msa2/image.hpp"

namespace msa2 {

// Binary masks are LabelMaps where any non-zero entry is foreground.

// 2|P & T| / (|P| + |T|); both empty -> 1.0.
double dice(const LabelMap& pred, const LabelMap& truth);

enum class HausdorffMode { percentile95, maximum };

// Symmetric Hausdorff distance in pixel units. Each direction is summarised
// by the 95th percentile (linear interpolation) or the maximum of its
// nearest-neighbour distances; the result is the larger direction.
// Undefined (nullopt) when either mask is empty.
std::optional<double> hd95(const LabelMap& pred, const LabelMap& truth,
                           HausdorffMode mode = HausdorffMode::percentile95);

struct ConfusionCounts {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::uint64_t total() const { return tp + tn + fp + fn; }
};

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& truth);
std::optional<double> sensitivity(const ConfusionCounts& c);
std::optional<double> specificity(const ConfusionCounts& c);
std::optional<double> accuracy(const ConfusionCounts& c);

// Case-averaged per-class metrics; nullopt where no case defined the value.
struct ClassMetrics {
    double dice = 0.0;
    std::optional<double> hd95;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> accuracy;
    std::size_t empty_dice_cases = 0;      // both masks empty, scored 1.0
    std::size_t undefined_hd95_cases = 0;  // excluded from hd95 mean
};

struct MetricReport {
    std::vector<std::string> class_names;  // index = class id
    std::map<int, ClassMetrics> per_class;  // foreground classes 1..C-1
    double mean_dice = 0.0;
    std::optional<double> mean_hd95;
    std::size_t cases = 0;
};

MetricReport evaluate(std::span<const LabelMap> predictions, std::span<const LabelMap> ground_truths, int num_classes,
                      std::vector<std::string> class_names = {}, HausdorffMode mode = HausdorffMode::percentile95);

nlohmann::json to_json(const MetricReport& report);
// Average Dice, HD95, then per-class Dice, in percent like published tables.
std::string format_table(const MetricReport& report, const std::string& label = "MSA2-Net");

LabelMap binarize(const LabelMap& labels, int cls);

}  // namespace msa2
