#include "msa2/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "msa2/fingerprint.hpp"
#include "msa2/tensor.hpp"

namespace msa2 {

namespace {

void check_pair(const LabelMap& a, const LabelMap& b) {
    if (a.height != b.height || a.width != b.width || a.size() != b.size())
        throw ShapeError("mask shapes differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width));
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Exact 1-D squared distance transform (lower envelope of parabolas).
void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        if (f[q] == kInf) continue;
        if (f[v[0]] == kInf) {
            v[0] = q;
            continue;
        }
        double s;
        while (true) {
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
            if (s <= z[k] && k > 0)
                --k;
            else
                break;
        }
        if (s <= z[k]) {  // k == 0: q dominates entirely
            v[0] = q;
            z[1] = kInf;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    if (f[v[0]] == kInf) {
        for (int q = 0; q < n; ++q) d[q] = kInf;
        return;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

// Squared Euclidean distance from every pixel to the nearest foreground pixel of `mask`.
std::vector<double> squared_distance_to(const LabelMap& mask) {
    const int H = mask.height, W = mask.width;
    std::vector<double> grid(static_cast<std::size_t>(H) * W);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = mask.labels[i] ? 0.0 : kInf;
    const int n = std::max(H, W);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    for (int x = 0; x < W; ++x) {
        for (int y = 0; y < H; ++y) f[y] = grid[static_cast<std::size_t>(y) * W + x];
        edt_1d(f.data(), d.data(), H, v, z);
        for (int y = 0; y < H; ++y) grid[static_cast<std::size_t>(y) * W + x] = d[y];
    }
    for (int y = 0; y < H; ++y) {
        double* row = grid.data() + static_cast<std::size_t>(y) * W;
        std::copy_n(row, W, f.begin());
        edt_1d(f.data(), d.data(), W, v, z);
        std::copy_n(d.begin(), W, row);
    }
    return grid;
}

double directed(const LabelMap& from, const std::vector<double>& to_dist2, HausdorffMode mode) {
    std::vector<double> dists;
    for (std::size_t i = 0; i < from.size(); ++i)
        if (from.labels[i]) dists.push_back(std::sqrt(to_dist2[i]));
    std::sort(dists.begin(), dists.end());
    if (mode == HausdorffMode::maximum) return dists.back();
    return interpolated_quantile(dists, 0.95);
}

std::size_t count_fg(const LabelMap& m) {
    return static_cast<std::size_t>(std::count_if(m.labels.begin(), m.labels.end(), [](auto v) { return v != 0; }));
}

}  // namespace

LabelMap binarize(const LabelMap& labels, int cls) {
    LabelMap out(labels.height, labels.width);
    for (std::size_t i = 0; i < labels.size(); ++i) out.labels[i] = labels.labels[i] == cls ? 1 : 0;
    return out;
}

double dice(const LabelMap& pred, const LabelMap& truth) {
    check_pair(pred, truth);
    std::size_t inter = 0, p = 0, t = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred.labels[i] != 0, b = truth.labels[i] != 0;
        p += a;
        t += b;
        inter += a && b;
    }
    if (p + t == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + t);
}

std::optional<double> hd95(const LabelMap& pred, const LabelMap& truth, HausdorffMode mode) {
    check_pair(pred, truth);
    if (count_fg(pred) == 0 || count_fg(truth) == 0) return std::nullopt;
    const double a = directed(pred, squared_distance_to(truth), mode);
    const double b = directed(truth, squared_distance_to(pred), mode);
    return std::max(a, b);
}

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& truth) {
    check_pair(pred, truth);
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.labels[i] != 0, t = truth.labels[i] != 0;
        if (p && t)
            ++c.tp;
        else if (p)
            ++c.fp;
        else if (t)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

std::optional<double> sensitivity(const ConfusionCounts& c) {
    if (c.tp + c.fn == 0) return std::nullopt;
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

std::optional<double> specificity(const ConfusionCounts& c) {
    if (c.tn + c.fp == 0) return std::nullopt;
    return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

std::optional<double> accuracy(const ConfusionCounts& c) {
    if (c.total() == 0) return std::nullopt;
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

namespace {

struct Mean {
    double sum = 0.0;
    std::size_t n = 0;
    void add(std::optional<double> v) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    std::optional<double> get() const { return n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt; }
};

}  // namespace

MetricReport evaluate(std::span<const LabelMap> predictions, std::span<const LabelMap> ground_truths, int num_classes,
                      std::vector<std::string> class_names, HausdorffMode mode) {
    if (predictions.size() != ground_truths.size())
        throw DataError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(ground_truths.size()) + " ground truths");
    if (num_classes < 2) throw ConfigError("evaluate: need at least 2 classes");
    if (class_names.empty())
        for (int c = 0; c < num_classes; ++c) class_names.push_back(c == 0 ? "background" : "class" + std::to_string(c));
    if (static_cast<int>(class_names.size()) != num_classes) throw ConfigError("evaluate: class_names size mismatch");

    MetricReport report;
    report.class_names = std::move(class_names);
    report.cases = predictions.size();
    Mean all_dice, all_hd;
    for (int c = 1; c < num_classes; ++c) {
        Mean d, h, se, sp, acc;
        ClassMetrics m;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            const LabelMap p = binarize(predictions[i], c);
            const LabelMap t = binarize(ground_truths[i], c);
            if (count_fg(p) == 0 && count_fg(t) == 0) ++m.empty_dice_cases;
            d.add(dice(p, t));
            const auto hd = hd95(p, t, mode);
            if (!hd) ++m.undefined_hd95_cases;
            h.add(hd);
            const auto counts = confusion(p, t);
            se.add(sensitivity(counts));
            sp.add(specificity(counts));
            acc.add(accuracy(counts));
        }
        m.dice = d.get().value_or(0.0);
        m.hd95 = h.get();
        m.sensitivity = se.get();
        m.specificity = sp.get();
        m.accuracy = acc.get();
        if (!predictions.empty()) all_dice.add(m.dice);
        all_hd.add(m.hd95);
        report.per_class[c] = m;
    }
    report.mean_dice = all_dice.get().value_or(0.0);
    report.mean_hd95 = all_hd.get();
    return report;
}

nlohmann::json to_json(const MetricReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["cases"] = r.cases;
    j["mean_dice"] = r.mean_dice;
    j["mean_hd95"] = opt(r.mean_hd95);
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [c, m] : r.per_class) {
        per[r.class_names.at(c)] = {{"class_id", c},
                                    {"dice", m.dice},
                                    {"hd95", opt(m.hd95)},
                                    {"sensitivity", opt(m.sensitivity)},
                                    {"specificity", opt(m.specificity)},
                                    {"accuracy", opt(m.accuracy)},
                                    {"empty_dice_cases", m.empty_dice_cases},
                                    {"undefined_hd95_cases", m.undefined_hd95_cases}};
    }
    j["per_class"] = per;
    return j;
}

std::string format_table(const MetricReport& r, const std::string& label) {
    std::ostringstream os;
    const int w = 10;
    os << std::left << std::setw(16) << "Architecture" << std::right << std::setw(w) << "Dice" << std::setw(w)
       << "HD95";
    for (const auto& [c, m] : r.per_class) os << std::setw(w) << r.class_names.at(c).substr(0, w - 1);
    os << '\n';
    os << std::left << std::setw(16) << label << std::right << std::fixed << std::setprecision(2) << std::setw(w)
       << 100.0 * r.mean_dice << std::setw(w);
    if (r.mean_hd95)
        os << *r.mean_hd95;
    else
        os << "n/a";
    for (const auto& [c, m] : r.per_class) os << std::setw(w) << 100.0 * m.dice;
    os << '\n';
    return os.str();
}

}  // namespace msa2
