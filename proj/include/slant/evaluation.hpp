#pragma once
// Overlap metrics, region volumes and paired statistics.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "volio.hpp"

namespace slant {

/// Per-label Dice; nullopt where the label is absent from both maps.
using LabelDsc = std::map<int, std::optional<double>>;

enum class DscKind { pDSC, rDSC, plain };

inline const char* dsc_kind_name(DscKind k) {
    switch (k) {
        case DscKind::pDSC: return "pDSC";
        case DscKind::rDSC: return "rDSC";
        case DscKind::plain: return "plain";
    }
    return "?";
}

struct DscRecord {
    std::string subject_id;
    LabelDsc per_label;
    double mean_dsc = 0.0;
    DscKind kind = DscKind::plain;
};

inline LabelDsc dsc_per_label(const LabelMap& a, const LabelMap& b) {
    if (a.dims != b.dims)
        fail(ErrorKind::invalid_argument, "DSC operands differ in dims: " + dims_string(a.dims) + " vs " + dims_string(b.dims));
    if (a.label_ids() != b.label_ids()) fail(ErrorKind::invalid_argument, "DSC operands have different vocabularies");
    require(a.labels.size() == b.labels.size(), "label data length mismatch");

    std::map<int, std::size_t> count_a, count_b, count_both;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        ++count_a[a.labels[i]];
        ++count_b[b.labels[i]];
        if (a.labels[i] == b.labels[i]) ++count_both[a.labels[i]];
    }
    LabelDsc out;
    for (int id : a.label_ids()) {
        const std::size_t na = count_a[id], nb = count_b[id];
        if (na + nb == 0) {
            out[id] = std::nullopt;
        } else {
            out[id] = 2.0 * static_cast<double>(count_both[id]) / static_cast<double>(na + nb);
        }
    }
    return out;
}

/// Mean over defined labels other than `background_id`.
inline double mean_dsc(const LabelDsc& per_label, int background_id = 0) {
    double sum = 0.0;
    int n = 0;
    for (const auto& [id, d] : per_label) {
        if (id == background_id || !d) continue;
        sum += *d;
        ++n;
    }
    if (n == 0) fail(ErrorKind::invalid_argument, "no defined non-background labels to average");
    return sum / n;
}

inline DscRecord make_dsc_record(const std::string& subject_id, const LabelMap& a, const LabelMap& b, DscKind kind) {
    DscRecord r;
    r.subject_id = subject_id;
    r.kind = kind;
    r.per_label = dsc_per_label(a, b);
    r.mean_dsc = mean_dsc(r.per_label, a.background_id);
    return r;
}

/// Agreement between automatic segmentations of the pre- and post-contrast
/// images of one subject.
inline DscRecord reproducibility_dsc(const LabelMap& seg_pre, const LabelMap& seg_post, const std::string& subject_id = {}) {
    return make_dsc_record(subject_id, seg_pre, seg_post, DscKind::rDSC);
}

/// Volume of one label in cm^3.
inline double region_volume(const LabelMap& seg, int label_id) {
    if (!seg.has_label(label_id)) fail(ErrorKind::invalid_argument, "label " + std::to_string(label_id) + " is not in the vocabulary");
    const auto n = std::count(seg.labels.begin(), seg.labels.end(), label_id);
    const double voxel_mm3 = seg.voxel_size[0] * seg.voxel_size[1] * seg.voxel_size[2];
    return static_cast<double>(n) * voxel_mm3 / 1000.0;
}

struct VolumeChangeRecord {
    std::string subject_id;
    double pre_volume_cm3 = 0.0;
    double post_volume_cm3 = 0.0;

    std::optional<double> percent_change() const {
        if (!(pre_volume_cm3 > 0.0)) return std::nullopt;
        return 100.0 * (post_volume_cm3 - pre_volume_cm3) / pre_volume_cm3;
    }
};

struct VolumeChangeStats {
    double mean_percent_change = 0.0;
    double rmse_cm3 = 0.0;
};

inline VolumeChangeStats volume_change_stats(std::span<const VolumeChangeRecord> records) {
    require(!records.empty(), "volume_change_stats needs at least one record");
    double pct = 0.0, sq = 0.0;
    for (const auto& r : records) {
        require(r.pre_volume_cm3 >= 0.0 && r.post_volume_cm3 >= 0.0, "volumes must be non-negative");
        const auto p = r.percent_change();
        if (!p) fail(ErrorKind::invalid_argument, "subject \"" + r.subject_id + "\" has zero pre-volume");
        pct += *p;
        const double d = r.post_volume_cm3 - r.pre_volume_cm3;
        sq += d * d;
    }
    const double n = static_cast<double>(records.size());
    return {pct / n, std::sqrt(sq / n)};
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test

inline double bonferroni(double alpha, int m) {
    require(m >= 1, "Bonferroni correction needs m >= 1");
    require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    return alpha / m;
}

struct StatResult {
    int n_pairs = 0;         // after dropping zero differences
    double w_plus = 0.0;
    double p_two_sided = 1.0;
    bool exact = true;
    int n_comparisons = 1;
    double bonferroni_alpha = 0.05;
    bool significant = false;
};

/// Average ranks (1-based) of |d|, tied values sharing the mean rank.
inline std::vector<double> average_ranks(std::span<const double> abs_values) {
    const std::size_t n = abs_values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return abs_values[a] < abs_values[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && abs_values[order[j + 1]] == abs_values[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline constexpr int kWilcoxonExactLimit = 20;

/// Paired two-sided test of x against y. Zero differences are dropped. For
/// n <= 20 the null distribution of W+ is enumerated exactly over all 2^n
/// sign assignments (as counts over doubled ranks, so tied half-ranks stay
/// integral); larger n use the tie- and continuity-corrected normal
/// approximation. p is twice the smaller tail, capped at 1.
inline StatResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y, int n_comparisons = 1,
                                       double alpha = 0.05) {
    if (x.size() != y.size())
        fail(ErrorKind::invalid_argument, "wilcoxon: samples differ in length (" + std::to_string(x.size()) + " vs " +
                                              std::to_string(y.size()) + ")");
    require(!x.empty(), "wilcoxon: samples are empty");
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double diff = x[i] - y[i];
        if (!std::isfinite(diff)) fail(ErrorKind::numeric, "wilcoxon: non-finite difference");
        if (diff != 0.0) d.push_back(diff);
    }
    if (d.empty()) fail(ErrorKind::invalid_argument, "wilcoxon: all differences are zero, test undefined");

    std::vector<double> mag(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) mag[i] = std::fabs(d[i]);
    const auto ranks = average_ranks(mag);

    StatResult r;
    r.n_pairs = static_cast<int>(d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i] > 0) r.w_plus += ranks[i];
    const int n = r.n_pairs;

    if (n <= kWilcoxonExactLimit) {
        std::vector<int> doubled(d.size());
        int total = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            doubled[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
            total += doubled[i];
        }
        std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
        counts[0] = 1.0;
        for (int w : doubled)
            for (int s = total; s >= w; --s) counts[static_cast<std::size_t>(s)] += counts[static_cast<std::size_t>(s - w)];
        const int observed = static_cast<int>(std::lround(2.0 * r.w_plus));
        double lower = 0.0, upper = 0.0;
        for (int s = 0; s <= total; ++s) {
            if (s <= observed) lower += counts[static_cast<std::size_t>(s)];
            if (s >= observed) upper += counts[static_cast<std::size_t>(s)];
        }
        const double all = std::ldexp(1.0, n);
        r.p_two_sided = std::min(1.0, 2.0 * std::min(lower, upper) / all);
        r.exact = true;
    } else {
        const double nn = n;
        const double mean = nn * (nn + 1.0) / 4.0;
        double tie_term = 0.0;
        std::vector<double> sorted = mag;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size();) {
            std::size_t j = i;
            while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
            const double t = static_cast<double>(j - i + 1);
            tie_term += t * t * t - t;
            i = j + 1;
        }
        const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
        const double dev = std::max(0.0, std::fabs(r.w_plus - mean) - 0.5);
        const double z = var > 0.0 ? dev / std::sqrt(var) : 0.0;
        r.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
        r.exact = false;
    }
    r.n_comparisons = n_comparisons;
    r.bonferroni_alpha = bonferroni(alpha, n_comparisons);
    r.significant = r.p_two_sided < r.bonferroni_alpha;
    return r;
}

// ---------------------------------------------------------------------------
// Summaries

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;  // sample sd (n - 1); 0 for n < 2
    std::size_t n = 0;
};

inline MeanSd mean_sd(std::span<const double> v) {
    MeanSd r;
    r.n = v.size();
    if (v.empty()) return r;
    double s = 0.0;
    for (double x : v) s += x;
    r.mean = s / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - r.mean) * (x - r.mean);
        r.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return r;
}

}  // namespace slant
