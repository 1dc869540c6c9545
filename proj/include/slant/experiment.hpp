#pragma once
// Cross-validated transfer-learning experiment: per fold, pretrain on the
// adult cohort, derive the baseline / new_only / augmented models, evaluate
// each on the new cohort and on held-out adult subjects, then pool the folds
// for paired tests. The report is a pure function of the spec.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "evaluation.hpp"
#include "model.hpp"
#include "nnet.hpp"
#include "phantom.hpp"
#include "tiling.hpp"
#include "transfer.hpp"
#include "volio.hpp"

namespace slant {

enum class ExperimentKind { pediatric, contrast };

inline const char* experiment_kind_name(ExperimentKind k) {
    return k == ExperimentKind::contrast ? "contrast" : "pediatric";
}

/// A cohort is either read from a manifest or generated in memory.
struct CohortSource {
    std::optional<std::filesystem::path> manifest;
    PhantomSpec phantom;
    int n = 0;
    bool explicit_seed = false;  // otherwise derived from the experiment seed
};

struct ExperimentSpec {
    std::string name = "experiment";
    ExperimentKind kind = ExperimentKind::pediatric;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::filesystem::path output_dir;
    CohortSource adult, original, new_cohort;
    std::vector<LabelEntry> vocabulary = phantom_vocabulary();
    Dims3 tiles_per_axis{3, 3, 3};
    Dims3 tile_shape{12, 12, 12};
    NetworkConfig network;
    int pretrain_epochs = 30;
    double pretrain_lr = 3e-3;
    TrainConfig train;
    int volume_label = label::hc_analog;
    double alpha = 0.05;
    int comparisons_new = 3;
    int comparisons_original = 6;
    double pretrain_ce_weight = 0.1;
    bool write_checkpoints = true;

    ExperimentSpec() { network.hidden_layers = 3; }
};

namespace detail {

inline CohortSource parse_cohort(const nlohmann::json& j, const std::filesystem::path& base_dir, const char* key,
                                 const std::string& default_preset, int default_n) {
    CohortSource c;
    if (!j.contains(key)) {
        c.phantom = preset(default_preset);
        c.n = default_n;
        return c;
    }
    const auto& e = j.at(key);
    if (e.contains("manifest")) {
        std::filesystem::path p = e["manifest"].get<std::string>();
        c.manifest = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
        return c;
    }
    nlohmann::json ph = e;
    if (!ph.contains("preset")) ph["preset"] = default_preset;
    c.phantom = phantom_spec_from_json(ph);
    c.n = e.value("n", default_n);
    c.explicit_seed = e.contains("seed");
    require(c.n >= 1, std::string("cohort \"") + key + "\" needs n >= 1");
    return c;
}

// Cohorts without an explicit phantom seed draw disjoint seed ranges from
// the experiment seed, so the adult and original pools never share subjects.
enum CohortSlot : std::uint64_t { adult_slot = 0x41, original_slot = 0x4F, new_slot = 0x4E };

inline CohortSource seeded(CohortSource c, std::uint64_t experiment_seed, CohortSlot slot) {
    if (!c.manifest && !c.explicit_seed) c.phantom.seed = mix_seed(experiment_seed, slot);
    return c;
}

inline nlohmann::json cohort_json(const CohortSource& c) {
    if (c.manifest) return {{"manifest", c.manifest->string()}};
    auto j = to_json(c.phantom);
    j["n"] = c.n;
    return j;
}

}  // namespace detail

/// Relative manifest and output paths resolve against `base_dir`.
inline ExperimentSpec parse_experiment_spec(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    ExperimentSpec s;
    try {
        if (!j.is_object()) fail(ErrorKind::invalid_argument, "experiment spec must be a JSON object");
        s.name = j.value("name", s.name);
        const std::string kind = j.value("kind", std::string("pediatric"));
        if (kind == "pediatric")
            s.kind = ExperimentKind::pediatric;
        else if (kind == "contrast")
            s.kind = ExperimentKind::contrast;
        else
            fail(ErrorKind::invalid_argument, "unknown experiment kind \"" + kind + "\"");
        s.seed = j.value("seed", s.seed);
        s.threads = j.value("threads", s.threads);
        if (j.contains("output_dir")) {
            std::filesystem::path p = j["output_dir"].get<std::string>();
            s.output_dir = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
        }
        const nlohmann::json cohorts = j.value("cohorts", nlohmann::json::object());
        s.adult = detail::parse_cohort(cohorts, base_dir, "adult", "adult", 20);
        s.original = detail::parse_cohort(cohorts, base_dir, "original", "adult", 10);
        s.new_cohort = detail::parse_cohort(cohorts, base_dir, "new", s.kind == ExperimentKind::contrast ? "contrast" : "pediatric", 10);
        if (j.contains("vocabulary")) {
            s.vocabulary.clear();
            for (const auto& e : j["vocabulary"]) s.vocabulary.push_back({e.at("id").get<int>(), e.at("name").get<std::string>()});
        }
        if (j.contains("tile_plan")) {
            const auto& t = j["tile_plan"];
            s.tiles_per_axis = t.value("tiles_per_axis", s.tiles_per_axis);
            s.tile_shape = t.value("tile_shape", s.tile_shape);
        }
        if (j.contains("network")) {
            const auto& n = j["network"];
            s.network.hidden_channels = n.value("hidden_channels", s.network.hidden_channels);
            s.network.hidden_layers = n.value("hidden_layers", s.network.hidden_layers);
            s.network.exclude_background = n.value("exclude_background", s.network.exclude_background);
            s.network.dice_smooth = n.value("dice_smooth", s.network.dice_smooth);
        }
        if (j.contains("pretrain")) {
            s.pretrain_epochs = j["pretrain"].value("epochs", s.pretrain_epochs);
            s.pretrain_lr = j["pretrain"].value("lr", s.pretrain_lr);
            s.pretrain_ce_weight = j["pretrain"].value("ce_weight", s.pretrain_ce_weight);
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            s.train.epochs = t.value("epochs", s.train.epochs);
            s.train.lr = t.value("lr", s.train.lr);
            s.train.folds = t.value("folds", s.train.folds);
            s.train.mix_ratio = t.value("mix_ratio", s.train.mix_ratio);
            if (t.contains("split")) s.train.split = t["split"].get<std::array<double, 3>>();
        }
        s.volume_label = j.value("volume_label", s.volume_label);
        s.alpha = j.value("alpha", s.alpha);
        if (j.contains("comparisons")) {
            s.comparisons_new = j["comparisons"].value("new", s.comparisons_new);
            s.comparisons_original = j["comparisons"].value("original", s.comparisons_original);
        }
        s.write_checkpoints = j.value("write_checkpoints", s.write_checkpoints);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::invalid_argument, std::string("malformed experiment spec: ") + e.what());
    }
    s.network.num_classes = static_cast<int>(s.vocabulary.size());
    s.network.validate();
    s.train.seed = s.seed;
    s.train.threads = s.threads;
    s.train.validate();
    require(s.pretrain_epochs >= 1, "pretrain epochs must be >= 1");
    require(s.pretrain_lr > 0.0, "pretrain lr must be positive");
    require(s.pretrain_ce_weight >= 0.0, "pretrain ce_weight must be >= 0");
    require(s.comparisons_new >= 1 && s.comparisons_original >= 1, "comparison counts must be >= 1");
    bonferroni(s.alpha, 1);
    return s;
}

inline ExperimentSpec load_experiment_spec(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::invalid_argument, "cannot parse " + path.string() + ": " + e.what());
    }
    return parse_experiment_spec(j, path.parent_path());
}

inline nlohmann::json experiment_spec_json(const ExperimentSpec& s) {
    nlohmann::json vocab = nlohmann::json::array();
    for (const auto& e : s.vocabulary) vocab.push_back({{"id", e.id}, {"name", e.name}});
    return {{"name", s.name},
            {"kind", experiment_kind_name(s.kind)},
            {"seed", s.seed},
            {"cohorts", {{"adult", detail::cohort_json(detail::seeded(s.adult, s.seed, detail::adult_slot))},
                         {"original", detail::cohort_json(detail::seeded(s.original, s.seed, detail::original_slot))},
                         {"new", detail::cohort_json(detail::seeded(s.new_cohort, s.seed, detail::new_slot))}}},
            {"vocabulary", vocab},
            {"tile_plan", {{"tiles_per_axis", s.tiles_per_axis}, {"tile_shape", s.tile_shape}}},
            {"network", {{"hidden_channels", s.network.hidden_channels}, {"hidden_layers", s.network.hidden_layers},
                         {"exclude_background", s.network.exclude_background}, {"dice_smooth", s.network.dice_smooth}}},
            {"pretrain", {{"epochs", s.pretrain_epochs}, {"lr", s.pretrain_lr}, {"ce_weight", s.pretrain_ce_weight}}},
            {"train", {{"epochs", s.train.epochs}, {"lr", s.train.lr}, {"folds", s.train.folds},
                       {"split", s.train.split}, {"mix_ratio", s.train.mix_ratio}}},
            {"volume_label", s.volume_label},
            {"alpha", s.alpha},
            {"comparisons", {{"new", s.comparisons_new}, {"original", s.comparisons_original}}}};
}

// ---------------------------------------------------------------------------
// Report

inline constexpr Regime kRegimes[] = {Regime::baseline, Regime::new_only, Regime::augmented};

struct FoldResult {
    int fold = 0;
    Regime regime = Regime::baseline;
    std::string cohort;  // "new" or "original"
    DscKind kind = DscKind::pDSC;
    std::vector<DscRecord> subjects;

    double mean() const {
        std::vector<double> v;
        for (const auto& r : subjects) v.push_back(r.mean_dsc);
        return mean_sd(v).mean;
    }
};

struct Comparison {
    std::string cohort;
    Regime a, b;
    StatResult result;
};

struct VolumeChangeEntry {
    int fold = 0;
    VolumeChangeRecord record;
};

struct SelectionEntry {
    int fold = 0;
    std::string regime;  // "pretrain" is the baseline's own training
    int selected_epoch = 0;
    std::vector<double> curve;
};

struct ExperimentReport {
    ExperimentSpec spec;
    std::vector<FoldResult> results;  // fold-major, then regime, then cohort
    std::vector<Comparison> stats;
    std::map<Regime, std::vector<VolumeChangeEntry>> volume_change;
    std::vector<SelectionEntry> selection;
    std::vector<TrainLogRow> training_log;

    DscKind new_kind() const { return spec.kind == ExperimentKind::contrast ? DscKind::rDSC : DscKind::pDSC; }

    /// Per-subject mean DSC pooled over folds, in fold order.
    std::vector<double> pooled(Regime r, const std::string& cohort) const {
        std::vector<double> v;
        for (const auto& f : results)
            if (f.regime == r && f.cohort == cohort)
                for (const auto& s : f.subjects) v.push_back(s.mean_dsc);
        return v;
    }

    const FoldResult& result(int fold, Regime r, const std::string& cohort) const {
        for (const auto& f : results)
            if (f.fold == fold && f.regime == r && f.cohort == cohort) return f;
        fail(ErrorKind::invalid_argument, "report has no result for fold " + std::to_string(fold));
    }
};

inline nlohmann::json dsc_record_json(const DscRecord& r) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [id, d] : r.per_label) per[std::to_string(id)] = d ? nlohmann::json(*d) : nlohmann::json(nullptr);
    return {{"id", r.subject_id}, {"mean_dsc", r.mean_dsc}, {"per_label", per}};
}

inline nlohmann::json report_json(const ExperimentReport& rep) {
    nlohmann::json j;
    j["format"] = "slant-report";
    j["version"] = 1;
    j["spec"] = experiment_spec_json(rep.spec);
    j["folds"] = rep.spec.train.folds;
    j["regimes"] = {"baseline", "new_only", "augmented"};
    j["cohorts"] = {"new", "original"};
    j["new_metric"] = dsc_kind_name(rep.new_kind());

    nlohmann::json results = nlohmann::json::array();
    for (const auto& f : rep.results) {
        nlohmann::json subj = nlohmann::json::array();
        for (const auto& s : f.subjects) subj.push_back(dsc_record_json(s));
        results.push_back({{"fold", f.fold}, {"regime", regime_name(f.regime)}, {"cohort", f.cohort},
                           {"kind", dsc_kind_name(f.kind)}, {"mean", f.mean()}, {"subjects", subj}});
    }
    j["results"] = results;

    nlohmann::json summary = nlohmann::json::array();
    for (const char* cohort : {"new", "original"})
        for (Regime r : kRegimes) {
            const auto v = rep.pooled(r, cohort);
            const auto ms = mean_sd(v);
            summary.push_back({{"regime", regime_name(r)}, {"cohort", cohort}, {"mean", ms.mean}, {"sd", ms.sd}, {"n", ms.n}});
        }
    j["summary"] = summary;

    nlohmann::json stats = nlohmann::json::array();
    for (const auto& c : rep.stats)
        stats.push_back({{"cohort", c.cohort},
                         {"comparison", std::string(regime_name(c.a)) + " vs " + regime_name(c.b)},
                         {"n_pairs", c.result.n_pairs},
                         {"W", c.result.w_plus},
                         {"p", c.result.p_two_sided},
                         {"exact", c.result.exact},
                         {"m", c.result.n_comparisons},
                         {"threshold", c.result.bonferroni_alpha},
                         {"significant", c.result.significant}});
    j["stats"] = stats;

    if (!rep.volume_change.empty()) {
        nlohmann::json vc;
        vc["label"] = rep.spec.volume_label;
        nlohmann::json regimes = nlohmann::json::array();
        for (Regime r : kRegimes) {
            auto it = rep.volume_change.find(r);
            if (it == rep.volume_change.end()) continue;
            nlohmann::json recs = nlohmann::json::array();
            std::vector<VolumeChangeRecord> plain;
            double abs_sum = 0.0;
            int defined = 0;
            for (const auto& e : it->second) {
                const auto pc = e.record.percent_change();
                recs.push_back({{"fold", e.fold},
                                {"subject_id", e.record.subject_id},
                                {"pre_cm3", e.record.pre_volume_cm3},
                                {"post_cm3", e.record.post_volume_cm3},
                                {"percent_change", pc ? nlohmann::json(*pc) : nlohmann::json(nullptr)}});
                if (pc) {
                    plain.push_back(e.record);
                    abs_sum += std::fabs(*pc);
                    ++defined;
                }
            }
            nlohmann::json entry{{"regime", regime_name(r)}, {"records", recs}, {"n_defined", defined}};
            if (defined > 0) {
                const auto st = volume_change_stats(plain);
                entry["mean_percent_change"] = st.mean_percent_change;
                entry["mean_abs_percent_change"] = abs_sum / defined;
                entry["rmse_cm3"] = st.rmse_cm3;
            } else {
                entry["mean_percent_change"] = nullptr;
                entry["mean_abs_percent_change"] = nullptr;
                entry["rmse_cm3"] = nullptr;
            }
            regimes.push_back(entry);
        }
        vc["regimes"] = regimes;
        j["volume_change"] = vc;
    }

    nlohmann::json sel = nlohmann::json::array();
    for (const auto& s : rep.selection)
        sel.push_back({{"fold", s.fold}, {"regime", s.regime}, {"selected_epoch", s.selected_epoch}, {"validation_curve", s.curve}});
    j["selection"] = sel;
    return j;
}

// ---------------------------------------------------------------------------
// Running

using ProgressFn = std::function<void(const std::string&)>;

namespace detail {

inline std::vector<Subject> materialize(const CohortSource& src, CohortTag tag, const std::string& prefix,
                                        const std::vector<LabelEntry>& vocab, unsigned threads) {
    if (src.manifest) return load_subjects(load_manifest(*src.manifest), vocab);
    auto gen = generate_cohort(src.phantom, src.n, tag, {}, prefix, threads);
    std::vector<Subject> out;
    for (std::size_t i = 0; i < gen.subjects.size(); ++i) {
        auto& g = gen.subjects[i];
        Subject s;
        s.id = gen.manifest.subjects[i].subject_id;
        s.image = std::move(g.image);
        s.post_image = std::move(g.post_image);
        s.truth = std::move(g.truth);
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<std::string> ids_of(const std::vector<Subject>& v) {
    std::vector<std::string> out;
    for (const auto& s : v) out.push_back(s.id);
    return out;
}

}  // namespace detail

inline ExperimentReport run_experiment(const ExperimentSpec& spec, const ProgressFn& progress = {}) {
    auto say = [&](const std::string& msg) {
        if (progress) progress(msg);
    };
    const bool contrast = spec.kind == ExperimentKind::contrast;
    const auto adult = detail::materialize(detail::seeded(spec.adult, spec.seed, detail::adult_slot), CohortTag::original, "adult",
                                           spec.vocabulary, spec.threads);
    const auto original = detail::materialize(detail::seeded(spec.original, spec.seed, detail::original_slot), CohortTag::original,
                                              "orig", spec.vocabulary, spec.threads);
    const auto fresh = detail::materialize(detail::seeded(spec.new_cohort, spec.seed, detail::new_slot), contrast ? CohortTag::contrast_pair : CohortTag::new_cohort,
                                           contrast ? "pair" : "new", spec.vocabulary, spec.threads);
    if (contrast)
        for (const auto& s : fresh)
            if (!s.post_image) fail(ErrorKind::invalid_argument, "contrast subject " + s.id + " has no post-contrast image");

    const Dims3 dims = adult.front().image.dims();
    const TilePlan plan = plan_tiles(dims, spec.tiles_per_axis, spec.tile_shape);

    ExperimentReport rep;
    rep.spec = spec;
    const TrainConfig& split_cfg = spec.train;

    for (int fold = 0; fold < spec.train.folds; ++fold) {
        const auto a_split = split_ids(detail::ids_of(adult), fold, split_cfg);
        const auto o_split = split_ids(detail::ids_of(original), fold, split_cfg);
        const auto n_split = split_ids(detail::ids_of(fresh), fold, split_cfg);
        if (a_split.validation_ids.empty() || n_split.validation_ids.empty())
            fail(ErrorKind::invalid_argument, "fold " + std::to_string(fold) + " leaves an empty validation split");

        TrainConfig fold_cfg = spec.train;
        fold_cfg.seed = mix_seed(spec.seed, static_cast<std::uint64_t>(fold) + 1);
        TrainConfig pre_cfg = fold_cfg;
        pre_cfg.epochs = spec.pretrain_epochs;
        pre_cfg.lr = spec.pretrain_lr;
        pre_cfg.ce_weight = spec.pretrain_ce_weight;

        say("fold " + std::to_string(fold) + ": pretraining on " + std::to_string(a_split.train_ids.size()) + " adult subjects");
        const auto base = pretrain(examples_from(select_subjects(adult, a_split.train_ids)),
                                   examples_from(select_subjects(adult, a_split.validation_ids)), plan, spec.network,
                                   spec.vocabulary, pre_cfg, fold, &rep.training_log);
        rep.selection.push_back({fold, "pretrain", base.selected_epoch, base.validation_curve});

        // New-cohort training pairs. Contrast cohorts have no manual labels on
        // the post image: the baseline's segmentation of the pre image stands in.
        auto new_examples = [&](const std::vector<std::string>& ids) {
            std::vector<Example> out;
            for (const auto* s : select_subjects(fresh, ids)) {
                if (contrast)
                    out.push_back({s->id, *s->post_image, segment_volume(base, s->image, spec.threads)});
                else {
                    if (!s->truth) fail(ErrorKind::invalid_argument, "subject " + s->id + " has no truth labels");
                    out.push_back({s->id, s->image, *s->truth});
                }
            }
            return out;
        };
        const auto new_train = new_examples(n_split.train_ids);
        const auto new_val = new_examples(n_split.validation_ids);
        const auto orig_train = examples_from(select_subjects(original, o_split.train_ids));

        std::map<Regime, TrainedModel> models;
        models.emplace(Regime::baseline, base);
        for (Regime r : {Regime::new_only, Regime::augmented}) {
            TrainConfig cfg = fold_cfg;
            cfg.mix_mode = r == Regime::augmented ? MixMode::augmented : MixMode::new_only;
            say("fold " + std::to_string(fold) + ": transfer learning (" + regime_name(r) + ")");
            auto m = transfer_learn(base, new_train, new_val, orig_train, cfg, fold, &rep.training_log);
            rep.selection.push_back({fold, regime_name(r), m.selected_epoch, m.validation_curve});
            models.emplace(r, std::move(m));
        }

        std::vector<const Subject*> new_test = select_subjects(fresh, n_split.test_ids);
        std::vector<const Subject*> adult_test = select_subjects(adult, a_split.test_ids);
        for (const auto* s : select_subjects(original, o_split.test_ids)) adult_test.push_back(s);

        for (Regime r : kRegimes) {
            const TrainedModel& m = models.at(r);
            if (spec.write_checkpoints && !spec.output_dir.empty())
                save_checkpoint(m, spec.output_dir / "checkpoints" /
                                       ("fold" + std::to_string(fold) + "_" + regime_name(r) + ".tbnn"));
            const Segmenter seg = [&](const Volume3D& v) { return segment_volume(m, v, spec.threads); };

            FoldResult nr{fold, r, "new", rep.new_kind(), {}};
            if (contrast) {
                for (const auto* s : new_test) {
                    const auto pre = seg(s->image);
                    const auto post = seg(*s->post_image);
                    nr.subjects.push_back(reproducibility_dsc(pre, post, s->id));
                    rep.volume_change[r].push_back(
                        {fold, {s->id, region_volume(pre, spec.volume_label), region_volume(post, spec.volume_label)}});
                }
            } else {
                nr.subjects = evaluate_segmenter(seg, new_test, DscKind::pDSC);
            }
            rep.results.push_back(std::move(nr));
            rep.results.push_back({fold, r, "original", DscKind::pDSC, evaluate_segmenter(seg, adult_test, DscKind::pDSC)});
        }
        say("fold " + std::to_string(fold) + ": new " + dsc_kind_name(rep.new_kind()) + " baseline " +
            std::to_string(rep.result(fold, Regime::baseline, "new").mean()) + ", new_only " +
            std::to_string(rep.result(fold, Regime::new_only, "new").mean()) + ", augmented " +
            std::to_string(rep.result(fold, Regime::augmented, "new").mean()));
    }

    const std::pair<Regime, Regime> pairs[] = {{Regime::new_only, Regime::baseline},
                                               {Regime::augmented, Regime::baseline},
                                               {Regime::augmented, Regime::new_only}};
    for (const char* cohort : {"new", "original"}) {
        const int m = std::string(cohort) == "new" ? spec.comparisons_new : spec.comparisons_original;
        for (const auto& [a, b] : pairs) {
            const auto x = rep.pooled(a, cohort);
            const auto y = rep.pooled(b, cohort);
            StatResult st;
            bool all_zero = true;
            for (std::size_t i = 0; i < x.size(); ++i) all_zero = all_zero && x[i] == y[i];
            if (all_zero) {
                // Identical samples: no evidence of a difference.
                st.n_pairs = 0;
                st.p_two_sided = 1.0;
                st.n_comparisons = m;
                st.bonferroni_alpha = bonferroni(spec.alpha, m);
            } else {
                st = wilcoxon_signed_rank(x, y, m, spec.alpha);
            }
            rep.stats.push_back({cohort, a, b, st});
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Report files

namespace detail {

inline std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace detail

/// report.json, metrics_<regime>.csv, summary.csv, stats.csv,
/// training_log.csv and, for contrast runs, volume_change.csv.
inline void write_report(const ExperimentReport& rep, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
    const auto j = report_json(rep);
    detail::write_text(dir / "report.json", j.dump(2) + "\n");

    for (Regime r : kRegimes) {
        std::ostringstream os;
        os << "fold,cohort,subject_id,kind,label_id,dsc\n";
        for (const auto& f : rep.results) {
            if (f.regime != r) continue;
            for (const auto& s : f.subjects)
                for (const auto& [id, d] : s.per_label)
                    os << f.fold << ',' << f.cohort << ',' << s.subject_id << ',' << dsc_kind_name(f.kind) << ',' << id << ','
                       << (d ? detail::fmt_num(*d) : std::string()) << '\n';
        }
        detail::write_text(dir / (std::string("metrics_") + regime_name(r) + ".csv"), os.str());
    }

    std::ostringstream sum;
    sum << "regime,cohort,mean,sd,n\n";
    for (const auto& e : j["summary"])
        sum << e["regime"].get<std::string>() << ',' << e["cohort"].get<std::string>() << ',' << detail::fmt_num(e["mean"].get<double>())
            << ',' << detail::fmt_num(e["sd"].get<double>()) << ',' << e["n"].get<std::size_t>() << '\n';
    detail::write_text(dir / "summary.csv", sum.str());

    std::ostringstream st;
    st << "cohort,comparison,W,p,threshold,significant\n";
    for (const auto& c : rep.stats)
        st << c.cohort << ',' << regime_name(c.a) << " vs " << regime_name(c.b) << ',' << detail::fmt_num(c.result.w_plus) << ','
           << detail::fmt_num(c.result.p_two_sided) << ',' << detail::fmt_num(c.result.bonferroni_alpha) << ','
           << (c.result.significant ? "true" : "false") << '\n';
    detail::write_text(dir / "stats.csv", st.str());

    std::ostringstream lg;
    lg << "fold,regime,epoch,train_loss,val_dsc\n";
    for (const auto& r : rep.training_log)
        lg << r.fold << ',' << r.regime << ',' << r.epoch << ',' << detail::fmt_num(r.train_loss) << ',' << detail::fmt_num(r.val_dsc)
           << '\n';
    detail::write_text(dir / "training_log.csv", lg.str());

    if (!rep.volume_change.empty()) {
        std::ostringstream vc;
        vc << "regime,fold,subject_id,pre_cm3,post_cm3,percent_change\n";
        for (Regime r : kRegimes) {
            auto it = rep.volume_change.find(r);
            if (it == rep.volume_change.end()) continue;
            for (const auto& e : it->second) {
                const auto pc = e.record.percent_change();
                vc << regime_name(r) << ',' << e.fold << ',' << e.record.subject_id << ',' << detail::fmt_num(e.record.pre_volume_cm3)
                   << ',' << detail::fmt_num(e.record.post_volume_cm3) << ',' << (pc ? detail::fmt_num(*pc) : std::string()) << '\n';
            }
        }
        detail::write_text(dir / "volume_change.csv", vc.str());
    }
}

}  // namespace slant
