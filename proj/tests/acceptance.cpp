// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. Criteria 6-8 run the full experiments from config/ and
// take tens of minutes on one core.

#include <bit>
#include <chrono>
#include <cstring>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <slant/report.hpp>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace slant;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
    bool pass = true;
    std::vector<std::string> notes;

    void expect(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            notes.push_back("failed: " + what);
        }
    }
    void note(const std::string& s) { notes.push_back(s); }
};

std::string num(double v, int digits = 4) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

LabelMap random_map(Rng& rng, Dims3 d, int labels) {
    std::vector<int> ids;
    for (int i = 0; i < labels; ++i) ids.push_back(i);
    LabelMap m(d, {1, 1, 1}, numbered_vocabulary(ids));
    for (auto& l : m.labels) l = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(labels)));
    return m;
}

int uniform_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

// A random valid plan for `dims`: k in 1..3 per axis, smallest valid t up to D.
TilePlan random_plan(Rng& rng, Dims3 dims) {
    Dims3 k{}, t{};
    for (int a = 0; a < 3; ++a) {
        k[a] = uniform_int(rng, 1, 3);
        const int t_min = (dims[a] + k[a] - 1) / k[a];
        t[a] = uniform_int(rng, t_min, dims[a]);
    }
    return plan_tiles(dims, k, t);
}

// ---------------------------------------------------------------------------

Verdict gradient_suite() {
    Verdict v;
    Rng rng(101);
    double worst = 0.0;
    std::size_t checked = 0, skipped = 0;
    for (int i = 0; i < 20; ++i) {
        slant_test::GradCheckCase k;
        for (int a = 0; a < 3; ++a) k.dims[a] = uniform_int(rng, 3, 8);
        k.classes = uniform_int(rng, 2, 4);
        k.hidden_channels = uniform_int(rng, 2, 4);
        k.hidden_layers = uniform_int(rng, 1, 2);
        k.ce_weight = rng.uniform() < 0.5 ? 0.0 : 0.1;
        k.seed = 1000 + static_cast<std::uint64_t>(i);
        const auto r = slant_test::check_network_gradient(k);
        v.expect(r.checked > 0, "instance " + std::to_string(i) + " checked no parameters");
        v.expect(r.max_rel_error < 1e-4, "instance " + std::to_string(i) + " max relative error " + std::to_string(r.max_rel_error));
        worst = std::max(worst, r.max_rel_error);
        checked += r.checked;
        skipped += r.skipped;
    }
    v.note("20 instances, " + std::to_string(checked) + " parameters checked, " + std::to_string(skipped) +
           " excluded at ReLU kinks, max relative error " + std::to_string(worst));
    return v;
}

Verdict metric_oracles() {
    Verdict v;
    Rng rng(202);
    int dsc_mismatch = 0, fusion_mismatch = 0;
    for (int i = 0; i < 100; ++i) {
        const int labels = uniform_int(rng, 2, 6);
        const auto a = random_map(rng, {8, 8, 8}, labels), b = random_map(rng, {8, 8, 8}, labels);
        const auto d = dsc_per_label(a, b);
        for (int l = 0; l < labels; ++l)
            if (d.at(l) != slant_test::set_dice(a.labels, b.labels, l)) ++dsc_mismatch;
    }
    for (int i = 0; i < 50; ++i) {
        Dims3 dims;
        for (int a = 0; a < 3; ++a) dims[a] = uniform_int(rng, 4, 16);
        const auto plan = random_plan(rng, dims);
        std::vector<TilePrediction> tiles;
        const int labels = uniform_int(rng, 2, 5);
        for (const auto& o : plan.origins) tiles.emplace_back(o, random_map(rng, plan.tile_shape, labels));
        if (fuse_predictions(tiles, plan).labels != slant_test::histogram_fuse(tiles, dims)) ++fusion_mismatch;
    }
    v.expect(dsc_mismatch == 0, std::to_string(dsc_mismatch) + " DSC values differ from the set oracle");
    v.expect(fusion_mismatch == 0, std::to_string(fusion_mismatch) + " fusions differ from the histogram oracle");
    v.note("100 DSC maps and 50 fusion tilings compared exactly");
    return v;
}

Verdict wilcoxon_exactness() {
    Verdict v;
    Rng rng(303);
    int mismatches = 0;
    for (int i = 0; i < 1000; ++i) {
        const int n = uniform_int(rng, 1, 10);
        std::vector<double> x, y;
        std::set<double> mags;
        while (static_cast<int>(x.size()) < n) {
            const double a = rng.normal(), b = rng.normal();
            if (a == b || !mags.insert(std::fabs(a - b)).second) continue;  // keep the input tie-free
            x.push_back(a);
            y.push_back(b);
        }
        std::vector<double> d(x.size());
        for (std::size_t k = 0; k < d.size(); ++k) d[k] = x[k] - y[k];
        double w = 0.0;
        const double p = slant_test::enumerate_signed_rank_p(d, &w);
        const auto r = wilcoxon_signed_rank(x, y);
        if (r.w_plus != w || std::fabs(r.p_two_sided - p) > 1e-12 * std::max(1.0, p)) ++mismatches;
    }
    v.expect(mismatches == 0, std::to_string(mismatches) + " of 1000 cases differ from 2^n enumeration");

    const std::vector<double> pos{0.5, 1.0, 1.5, 2.0, 2.5, 3.0}, zero(6, 0.0);
    const double p6 = wilcoxon_signed_rank(pos, zero).p_two_sided;
    v.expect(p6 == 0.03125, "n = 6 all-positive p = " + std::to_string(p6));
    const std::string b3 = num(bonferroni(0.05, 3)), b6 = num(bonferroni(0.05, 6));
    v.expect(b3 == "0.0167", "Bonferroni m=3 gives " + b3);
    v.expect(b6 == "0.0083", "Bonferroni m=6 gives " + b6);
    v.note("1000 tie-free cases; p(n=6, all positive) = " + std::to_string(p6) + "; thresholds " + b3 + " / " + b6);
    return v;
}

Verdict tiling_invariants() {
    Verdict v;
    int coverage_failures = 0, combos = 0;
    for (int D = 1; D <= 32; ++D)
        for (int k = 1; k <= D; ++k)
            for (int t = 1; t <= D; ++t) {
                if (k * t < D) continue;
                ++combos;
                std::vector<int> hits(static_cast<std::size_t>(D), 0);
                try {
                    for (int o : axis_origins(D, k, t)) {
                        if (o < 0 || o + t > D) {
                            ++coverage_failures;
                            break;
                        }
                        for (int i = o; i < o + t; ++i) ++hits[static_cast<std::size_t>(i)];
                    }
                } catch (const Error&) {
                    ++coverage_failures;
                    continue;
                }
                if (std::count(hits.begin(), hits.end(), 0) != 0) ++coverage_failures;
            }
    v.expect(coverage_failures == 0, std::to_string(coverage_failures) + " (D, k, t) combinations leave gaps or fail");

    Rng rng(404);
    int identity_failures = 0;
    for (int i = 0; i < 50; ++i) {
        Dims3 dims;
        for (int a = 0; a < 3; ++a) dims[a] = uniform_int(rng, 4, 20);
        const auto plan = random_plan(rng, dims);
        const auto m = random_map(rng, dims, uniform_int(rng, 2, 6));
        std::vector<TilePrediction> tiles;
        for (const auto& o : plan.origins) tiles.emplace_back(o, extract_tile(m, o, plan.tile_shape));
        if (!(fuse_predictions(tiles, plan) == m)) ++identity_failures;
    }
    v.expect(identity_failures == 0, std::to_string(identity_failures) + " of 50 extract-then-fuse round trips differ");

    const auto p27 = plan_tiles({32, 32, 32}, {3, 3, 3}, {12, 12, 12});
    v.expect(p27.size() == 27, "(3,3,3) plan has " + std::to_string(p27.size()) + " tiles");
    v.note(std::to_string(combos) + " valid (D, k, t) combinations covered; 50 identity round trips; " + std::to_string(p27.size()) +
           " tiles");
    return v;
}

Verdict format_round_trip(const std::filesystem::path& scratch) {
    Verdict v;
    Rng rng(505);
    int failures = 0;
    std::map<std::pair<Datatype, Endianness>, int> seen;
    std::filesystem::create_directories(scratch);
    for (int i = 0; i < 100; ++i) {
        const Datatype t = std::array{Datatype::uint8, Datatype::int16, Datatype::float32}[i % 3];
        const Endianness e = (i / 3) % 2 == 0 ? Endianness::little : Endianness::big;
        ++seen[{t, e}];
        Dims3 dims;
        for (int a = 0; a < 3; ++a) dims[a] = uniform_int(rng, 1, 12);
        Volume3D vol(dims, {rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0)});
        vol.header.datatype = t;
        vol.header.endianness = e;
        for (auto& x : vol.data) {
            if (t == Datatype::uint8) {
                x = static_cast<float>(rng.below(256));
            } else if (t == Datatype::int16) {
                x = static_cast<float>(static_cast<int>(rng.below(65536)) - 32768);
            } else {
                float f;
                do f = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next())); while (!std::isfinite(f));
                x = f;
            }
        }
        const auto path = scratch / ("v" + std::to_string(i) + ".nii");
        write_volume(vol, path);
        const auto written = detail::read_file(path);
        const auto back = read_volume(path);
        const bool ok = same_volume(back, vol) && back.header.datatype == t && back.header.endianness == e &&
                        encode_volume(back) == written;
        if (!ok) ++failures;
        std::filesystem::remove(path);
    }
    v.expect(failures == 0, std::to_string(failures) + " of 100 volumes did not round-trip bit-identically");
    v.expect(seen.size() == 6, "not every datatype/byte-order pair was exercised");
    v.note("100 volumes over uint8/int16/float32 x little/big endian");
    return v;
}

// ---------------------------------------------------------------------------
// Experiments

struct Run {
    nlohmann::json report;
    double seconds = 0.0;
    std::filesystem::path dir;
};

Run run_config(const std::string& name, const std::filesystem::path& out, bool quiet) {
    const auto spec_path = std::filesystem::path(SLANT_SOURCE_DIR) / "config" / (name + ".json");
    ExperimentSpec spec = load_experiment_spec(spec_path);
    spec.output_dir = out;
    spec.write_checkpoints = false;
    spec.threads = 1;
    spec.train.threads = 1;
    const auto t0 = Clock::now();
    const auto rep = run_experiment(spec, [&](const std::string& m) {
        if (!quiet) std::cerr << "  [" << name << " " << num(seconds_since(t0), 0) << "s] " << m << "\n";
    });
    Run r;
    r.seconds = seconds_since(t0);
    write_report(rep, out);
    r.report = report_json(rep);
    r.dir = out;
    return r;
}

double fold_mean(const nlohmann::json& rep, int fold, const std::string& regime, const std::string& cohort) {
    for (const auto& r : rep["results"])
        if (r["fold"] == fold && r["regime"] == regime && r["cohort"] == cohort) return r["mean"].get<double>();
    fail(ErrorKind::invalid_argument, "report lacks fold " + std::to_string(fold) + " " + regime + "/" + cohort);
}

double pooled_mean(const nlohmann::json& rep, const std::string& regime, const std::string& cohort) {
    for (const auto& s : rep["summary"])
        if (s["regime"] == regime && s["cohort"] == cohort) return s["mean"].get<double>();
    fail(ErrorKind::invalid_argument, "report lacks summary " + regime + "/" + cohort);
}

Verdict pediatric_criterion(const Run& run) {
    Verdict v;
    const auto& rep = run.report;
    const int folds = rep["folds"].get<int>();
    int gain_folds = 0, forget_folds = 0;
    double drop_new_only = 0.0, drop_aug = 0.0;
    for (int f = 0; f < folds; ++f) {
        const double base = fold_mean(rep, f, "baseline", "new");
        const double g_new = fold_mean(rep, f, "new_only", "new") - base;
        const double g_aug = fold_mean(rep, f, "augmented", "new") - base;
        const double ob = fold_mean(rep, f, "baseline", "original");
        const double d_new = ob - fold_mean(rep, f, "new_only", "original");
        const double d_aug = ob - fold_mean(rep, f, "augmented", "original");
        drop_new_only += d_new / folds;
        drop_aug += d_aug / folds;
        const bool gain = g_new >= 0.05 && g_aug >= 0.05;
        const bool forget = d_new >= d_aug && d_aug <= 0.5 * d_new;
        gain_folds += gain;
        forget_folds += forget;
        v.note("fold " + std::to_string(f) + ": pDSC gain new_only " + num(g_new) + ", augmented " + num(g_aug) + "; adult drop new_only " +
               num(d_new) + ", augmented " + num(d_aug));
    }
    const double base = pooled_mean(rep, "baseline", "new");
    const double m_new = pooled_mean(rep, "new_only", "new") - base, m_aug = pooled_mean(rep, "augmented", "new") - base;
    v.note("mean pDSC gain new_only " + num(m_new) + ", augmented " + num(m_aug) + "; mean adult drop new_only " + num(drop_new_only) +
           ", augmented " + num(drop_aug) + "; " + num(run.seconds, 0) + " s");
    v.expect(m_new >= 0.05 && m_aug >= 0.05, "(a) mean pDSC gain below 0.05");
    v.expect(gain_folds >= folds - 1, "(a) pDSC gain >= 0.05 for both regimes on only " + std::to_string(gain_folds) + " folds");
    v.expect(drop_new_only >= drop_aug && drop_aug <= 0.5 * drop_new_only, "(b) averaged adult-drop ordering");
    v.expect(forget_folds >= folds - 1, "(b) adult-drop ordering on only " + std::to_string(forget_folds) + " folds");
    v.expect(run.seconds < 900.0, "runtime " + num(run.seconds, 0) + " s exceeds 15 min");
    return v;
}

Verdict contrast_criterion(const Run& run) {
    Verdict v;
    const auto& rep = run.report;
    const int folds = rep["folds"].get<int>();
    int better = 0;
    for (int f = 0; f < folds; ++f) {
        const double b = fold_mean(rep, f, "baseline", "new"), a = fold_mean(rep, f, "augmented", "new");
        better += a > b;
        v.note("fold " + std::to_string(f) + ": rDSC baseline " + num(b) + ", augmented " + num(a));
    }
    const double mb = pooled_mean(rep, "baseline", "new"), ma = pooled_mean(rep, "augmented", "new");
    std::map<std::string, double> abs_pc;
    for (const auto& r : rep["volume_change"]["regimes"])
        if (!r["mean_abs_percent_change"].is_null()) abs_pc[r["regime"].get<std::string>()] = r["mean_abs_percent_change"].get<double>();
    v.note("mean rDSC baseline " + num(mb) + ", augmented " + num(ma) + "; HC mean |% change| baseline " +
           (abs_pc.count("baseline") ? num(abs_pc["baseline"], 3) : std::string("undefined")) + ", augmented " +
           (abs_pc.count("augmented") ? num(abs_pc["augmented"], 3) : std::string("undefined")) + "; " + num(run.seconds, 0) + " s");
    v.expect(ma > mb, "mean rDSC augmented not above baseline");
    v.expect(better >= folds - 1, "rDSC ordering on only " + std::to_string(better) + " folds");
    v.expect(abs_pc.count("baseline") && abs_pc.count("augmented") && abs_pc["augmented"] < abs_pc["baseline"],
             "HC mean |% volume change| under augmented is not below baseline");
    v.expect(run.seconds < 900.0, "runtime " + num(run.seconds, 0) + " s exceeds 15 min");
    return v;
}

// ---------------------------------------------------------------------------

bool report_line(int id, const std::string& title, double seconds, double limit, Verdict v) {
    if (limit > 0.0 && seconds >= limit) v.expect(false, "runtime " + num(seconds, 1) + " s exceeds " + num(limit, 0) + " s");
    std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << ": " << title << " (" << num(seconds, 1) << " s)\n";
    for (const auto& n : v.notes) std::cout << "    " << n << "\n";
    std::cout.flush();
    return v.pass;
}

bool timed(int id, const std::string& title, double limit, const std::function<Verdict()>& fn) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
        v = fn();
    } catch (const std::exception& e) {
        v.expect(false, std::string("exception: ") + e.what());
    }
    return report_line(id, title, seconds_since(t0), limit, std::move(v));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria runner"};
    std::filesystem::path out = std::filesystem::temp_directory_path() / "slant-acceptance";
    std::vector<int> only;
    bool quiet = false;
    app.add_option("--out", out, "Directory for experiment reports");
    app.add_option("--only", only, "Run just these criteria (1-8)")->delimiter(',')->check(CLI::Range(1, 8));
    app.add_flag("--quiet", quiet, "No experiment progress on stderr");
    CLI11_PARSE(app, argc, argv);
    auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

    bool all = true;
    if (wanted(1)) all &= timed(1, "end-to-end gradients match central differences", 60, gradient_suite);
    if (wanted(2)) all &= timed(2, "DSC and fusion equal brute-force oracles", 30, metric_oracles);
    if (wanted(3)) all &= timed(3, "Wilcoxon exact p-values and Bonferroni thresholds", 30, wilcoxon_exactness);
    if (wanted(4)) all &= timed(4, "tiling coverage, identity and 27-tile plan", 30, tiling_invariants);
    if (wanted(5)) all &= timed(5, "NIfTI write/read round trip", 30, [&] { return format_round_trip(out / "roundtrip"); });

    std::optional<Run> ped, con;
    if (wanted(6) || wanted(8)) {
        const auto t0 = Clock::now();
        Verdict v;
        try {
            ped = run_config("pediatric", out / "pediatric", quiet);
            v = pediatric_criterion(*ped);
        } catch (const std::exception& e) {
            v.expect(false, std::string("exception: ") + e.what());
        }
        if (wanted(6)) all &= report_line(6, "pediatric transfer learning", seconds_since(t0), 0, v);
    }
    if (wanted(7) || wanted(8)) {
        const auto t0 = Clock::now();
        Verdict v;
        try {
            con = run_config("contrast", out / "contrast", quiet);
            v = contrast_criterion(*con);
        } catch (const std::exception& e) {
            v.expect(false, std::string("exception: ") + e.what());
        }
        if (wanted(7)) all &= report_line(7, "contrast transfer learning", seconds_since(t0), 0, v);
    }
    if (wanted(8)) {
        all &= timed(8, "experiment reports are byte-identical on rerun", 0, [&] {
            Verdict v;
            for (const auto& [name, first] : {std::pair{std::string("pediatric"), &ped}, std::pair{std::string("contrast"), &con}}) {
                if (!*first) {
                    v.expect(false, name + " first run did not complete");
                    continue;
                }
                const auto again = run_config(name, out / (name + "_rerun"), quiet);
                const bool same = slant_test::slurp((*first)->dir / "report.json") == slant_test::slurp(again.dir / "report.json");
                v.expect(same, name + " report.json differs between runs");
                v.note(name + ": report.json " + (same ? "identical" : "DIFFERENT") + " across two runs with seed " +
                       std::to_string(again.report["spec"]["seed"].get<std::uint64_t>()));
            }
            return v;
        });
    }
    std::cout << (all ? "all selected criteria PASS" : "some criteria FAIL") << "\n";
    return all ? 0 : 1;
}
