#include "msa2/fingerprint.hpp"

#include <algorithm>
#include <cmath>

#include "msa2/tensor.hpp"

namespace msa2 {

int KernelCandidateMatrix::max_kernel() const {
    int m = kMinKernel;
    for (const auto& row : quantized)
        for (int k : row) m = std::max(m, k);
    return m;
}

std::vector<double> area_proportions(const LabelMap& mask, int num_classes) {
    if (num_classes < 1 || num_classes > 256) throw ConfigError("num_classes must be in [1, 256]");
    if (mask.height < 1 || mask.width < 1 || mask.size() != static_cast<std::size_t>(mask.height) * mask.width)
        throw DataError("mask has invalid dimensions");
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::uint8_t v : mask.labels) {
        if (v >= num_classes)
            throw DataError("label " + std::to_string(v) + " out of range for " + std::to_string(num_classes) +
                            " classes");
        ++counts[v];
    }
    const double total = static_cast<double>(mask.size());
    std::vector<double> out(num_classes - 1);
    for (int c = 1; c < num_classes; ++c) out[c - 1] = static_cast<double>(counts[c]) / total;
    return out;
}

double interpolated_quantile(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw DataError("no foreground samples");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

QuartileVector quartile_stats(std::span<const double> samples) {
    if (samples.empty()) throw DataError("no foreground samples");
    std::vector<double> sorted(samples.begin(), samples.end());
    for (double v : sorted)
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("area proportion outside [0, 1]");
    std::sort(sorted.begin(), sorted.end());
    return {interpolated_quantile(sorted, 0.25), interpolated_quantile(sorted, 0.50),
            interpolated_quantile(sorted, 0.75), interpolated_quantile(sorted, 0.95)};
}

int quantize_kernel(double raw) {
    const double m = std::floor((raw - 1.0) / 2.0 + 0.5);
    const int k = 2 * static_cast<int>(m) + 1;
    return std::clamp(k, kMinKernel, kMaxKernel);
}

KernelCandidateMatrix candidate_matrix_from_shift(const std::array<double, 4>& shift) {
    KernelCandidateMatrix m;
    m.shift = shift;
    for (int b = 0; b < 4; ++b)
        for (int s = 0; s < 4; ++s) {
            m.raw[b][s] = m.base[b] * m.shift[s];
            m.quantized[b][s] = quantize_kernel(m.raw[b][s]);
        }
    return m;
}

KernelCandidateMatrix build_candidate_matrix(const QuartileVector& quartiles) {
    std::array<double, 4> shift{};
    for (int s = 0; s < 4; ++s) {
        if (!(quartiles[s] >= 0.0 && quartiles[s] <= 1.0)) throw DataError("quartile outside [0, 1]");
        shift[s] = 1.0 + quartiles[s];
    }
    return candidate_matrix_from_shift(shift);
}

KernelCandidateMatrix build_candidate_matrix(const Fingerprint& fingerprint, std::optional<int> class_id) {
    if (!class_id) return build_candidate_matrix(fingerprint.pooled_quartiles);
    auto it = fingerprint.per_class_quartiles.find(*class_id);
    if (it == fingerprint.per_class_quartiles.end())
        throw DataError("fingerprint has no statistics for class " + std::to_string(*class_id));
    return build_candidate_matrix(it->second);
}

std::vector<AreaProportionSample> collect_area_samples(std::span<const LabelMap> masks, int num_classes,
                                                       std::span<const std::string> sample_ids) {
    if (!sample_ids.empty() && sample_ids.size() != masks.size())
        throw DataError("sample id count does not match mask count");
    std::vector<AreaProportionSample> out;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const auto props = area_proportions(masks[i], num_classes);
        for (std::size_t c = 0; c < props.size(); ++c) {
            if (props[c] <= 0.0) continue;
            out.push_back({static_cast<int>(c) + 1, props[c], sample_ids.empty() ? std::to_string(i) : sample_ids[i]});
        }
    }
    if (out.empty()) throw DataError("no foreground samples: dataset has no foreground pixels");
    return out;
}

Fingerprint fingerprint_from_samples(std::span<const AreaProportionSample> samples, std::size_t sample_count,
                                     std::string dataset_id) {
    if (samples.empty()) throw DataError("no foreground samples");
    Fingerprint fp;
    fp.dataset_id = std::move(dataset_id);
    fp.sample_count = sample_count;
    std::vector<double> pooled;
    pooled.reserve(samples.size());
    for (const auto& s : samples) {
        if (s.class_id < 1) throw DataError("background is never sampled");
        if (!(s.proportion >= 0.0 && s.proportion <= 1.0)) throw DataError("area proportion outside [0, 1]");
        fp.per_class_samples[s.class_id].push_back(s.proportion);
        pooled.push_back(s.proportion);
    }
    for (auto& [cls, values] : fp.per_class_samples) {
        std::sort(values.begin(), values.end());
        fp.per_class_quartiles[cls] = quartile_stats(values);
    }
    fp.pooled_quartiles = quartile_stats(pooled);
    return fp;
}

Fingerprint fingerprint_dataset(std::span<const LabelMap> masks, int num_classes, std::string dataset_id) {
    const auto samples = collect_area_samples(masks, num_classes);
    return fingerprint_from_samples(samples, masks.size(), std::move(dataset_id));
}

nlohmann::json to_json(const KernelCandidateMatrix& m) {
    nlohmann::json j;
    j["base"] = m.base;
    j["shift"] = m.shift;
    j["raw"] = m.raw;
    j["quantized"] = m.quantized;
    return j;
}

KernelCandidateMatrix candidate_matrix_from_json(const nlohmann::json& j) {
    KernelCandidateMatrix m;
    m.base = j.at("base").get<std::array<double, 4>>();
    m.shift = j.at("shift").get<std::array<double, 4>>();
    m.raw = j.at("raw").get<std::array<std::array<double, 4>, 4>>();
    m.quantized = j.at("quantized").get<std::array<std::array<int, 4>, 4>>();
    for (const auto& row : m.quantized)
        for (int k : row)
            if (k < kMinKernel || k > kMaxKernel || k % 2 == 0) throw DataError("candidate matrix has illegal kernel size");
    return m;
}

nlohmann::json to_json(const Fingerprint& fp) {
    nlohmann::json j;
    j["dataset_id"] = fp.dataset_id;
    j["sample_count"] = fp.sample_count;
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [cls, q] : fp.per_class_quartiles) per_class[std::to_string(cls)] = q;
    j["per_class_quartiles"] = per_class;
    j["pooled_quartiles"] = fp.pooled_quartiles;
    j["candidate_matrix"] = to_json(build_candidate_matrix(fp.pooled_quartiles));
    nlohmann::json samples = nlohmann::json::object();
    for (const auto& [cls, v] : fp.per_class_samples) samples[std::to_string(cls)] = v;
    j["per_class_samples"] = samples;
    return j;
}

Fingerprint fingerprint_from_json(const nlohmann::json& j) {
    Fingerprint fp;
    fp.dataset_id = j.at("dataset_id").get<std::string>();
    fp.sample_count = j.at("sample_count").get<std::size_t>();
    for (const auto& [key, value] : j.at("per_class_quartiles").items())
        fp.per_class_quartiles[std::stoi(key)] = value.get<QuartileVector>();
    fp.pooled_quartiles = j.at("pooled_quartiles").get<QuartileVector>();
    if (j.contains("per_class_samples"))
        for (const auto& [key, value] : j.at("per_class_samples").items())
            fp.per_class_samples[std::stoi(key)] = value.get<std::vector<double>>();
    return fp;
}

}  // namespace msa2
