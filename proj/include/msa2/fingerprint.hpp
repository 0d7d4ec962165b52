#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "msa2/image.hpp"

namespace msa2 {

// [Q1, Q2, Q3, P95]
using QuartileVector = std::array<double, 4>;

struct AreaProportionSample {
    int class_id = 1;
    double proportion = 0.0;
    std::string sample_id;
};

struct Fingerprint {
    std::string dataset_id;
    std::size_t sample_count = 0;
    std::map<int, QuartileVector> per_class_quartiles;
    QuartileVector pooled_quartiles{};
    // raw proportions per class, sorted ascending; kept for plot export
    std::map<int, std::vector<double>> per_class_samples;
};

inline constexpr std::array<int, 4> kBaseKernels{1, 3, 5, 7};
inline constexpr int kMinKernel = 1;
inline constexpr int kMaxKernel = 13;

struct KernelCandidateMatrix {
    std::array<double, 4> base{1.0, 3.0, 5.0, 7.0};
    std::array<double, 4> shift{1.0, 1.0, 1.0, 1.0};
    std::array<std::array<double, 4>, 4> raw{};
    std::array<std::array<int, 4>, 4> quantized{};

    int kernel(int b, int s) const { return quantized[b][s]; }
    int max_kernel() const;
    bool operator==(const KernelCandidateMatrix&) const = default;
};

// Fraction of the image covered by each foreground class 1..num_classes-1.
std::vector<double> area_proportions(const LabelMap& mask, int num_classes);

// Quantile at fractional index q*(n-1) of an ascending list, linear interpolation.
double interpolated_quantile(std::span<const double> sorted, double q);

// [Q1, Q2, Q3, P95] of the given proportions (any order).
QuartileVector quartile_stats(std::span<const double> samples);

// Nearest odd integer, ties toward the larger, clamped to [1, 13].
int quantize_kernel(double raw);

KernelCandidateMatrix candidate_matrix_from_shift(const std::array<double, 4>& shift);
// shift = 1 + quartiles
KernelCandidateMatrix build_candidate_matrix(const QuartileVector& quartiles);
// Uses pooled quartiles, or one class's quartiles when class_id is given.
KernelCandidateMatrix build_candidate_matrix(const Fingerprint& fingerprint, std::optional<int> class_id = std::nullopt);

// Per-sample foreground proportions; classes absent from a sample contribute
// no entry. Throws DataError if no foreground pixel exists in any mask.
std::vector<AreaProportionSample> collect_area_samples(std::span<const LabelMap> masks, int num_classes,
                                                       std::span<const std::string> sample_ids = {});
Fingerprint fingerprint_from_samples(std::span<const AreaProportionSample> samples, std::size_t sample_count,
                                     std::string dataset_id);
Fingerprint fingerprint_dataset(std::span<const LabelMap> masks, int num_classes, std::string dataset_id);

nlohmann::json to_json(const KernelCandidateMatrix& m);
KernelCandidateMatrix candidate_matrix_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Fingerprint& fp);
Fingerprint fingerprint_from_json(const nlohmann::json& j);

}  // namespace msa2
