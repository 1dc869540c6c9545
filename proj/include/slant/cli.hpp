#pragma once
// Subcommands of the slant command-line tool. Exit codes: 0 success,
// 2 usage or spec error, 3 I/O error, 4 numerical failure.

#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "common.hpp"
#include "evaluation.hpp"
#include "experiment.hpp"
#include "model.hpp"
#include "phantom.hpp"
#include "report.hpp"
#include "transfer.hpp"
#include "volio.hpp"

namespace slant::cli {

enum ExitCode : int { ok = 0, usage = 2, io_error = 3, numeric_error = 4 };

inline int exit_code_for(ErrorKind k) {
    switch (k) {
        case ErrorKind::invalid_argument: return usage;
        case ErrorKind::format:
        case ErrorKind::io: return io_error;
        case ErrorKind::numeric: return numeric_error;
    }
    return usage;
}

struct Streams {
    std::ostream& out = std::cout;
    std::ostream& err = std::cerr;
};

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::invalid_argument, "cannot parse " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// phantom

/// Spec: a phantom preset plus overrides, and
///   n       cohort size (default 10)
///   cohort  "original" | "new" | "contrast_pair" (default "original")
///   prefix  subject id prefix (default "subj")
inline int cmd_phantom(const std::filesystem::path& spec_path, const std::filesystem::path& out_dir,
                       std::optional<std::uint64_t> seed, unsigned threads, Streams io) {
    const auto j = read_json_file(spec_path);
    if (!j.is_object()) fail(ErrorKind::invalid_argument, "phantom spec must be a JSON object");
    PhantomSpec spec = phantom_spec_from_json(j);
    if (seed) spec.seed = *seed;
    int n = 10;
    CohortTag tag = CohortTag::original;
    std::string prefix = "subj";
    try {
        n = j.value("n", n);
        tag = parse_cohort_tag(j.value("cohort", std::string("original")));
        prefix = j.value("prefix", prefix);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::invalid_argument, std::string("malformed phantom spec: ") + e.what());
    }
    if (tag == CohortTag::contrast_pair && spec.enhancement_delta == 0.0)
        fail(ErrorKind::invalid_argument, "contrast_pair cohorts need a non-zero enhancement_delta");
    const auto cohort = generate_cohort(spec, n, tag, out_dir, prefix, threads);
    io.out << "phantom: wrote " << cohort.subjects.size() << " subjects (" << cohort_tag_name(tag) << ", seed " << spec.seed << ") to "
           << out_dir.string() << "\n";
    return ok;
}

// ---------------------------------------------------------------------------
// pretrain / transfer

namespace detail {

inline ExperimentSpec load_spec_with_overrides(const std::filesystem::path& spec_path, std::optional<std::uint64_t> seed,
                                               unsigned threads) {
    ExperimentSpec spec = load_experiment_spec(spec_path);
    if (seed) spec.seed = *seed;
    spec.threads = threads;
    spec.train.seed = spec.seed;
    spec.train.threads = threads;
    return spec;
}

inline void write_training_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "fold,regime,epoch,train_loss,val_dsc\n";
    for (const auto& r : log)
        os << r.fold << ',' << r.regime << ',' << r.epoch << ',' << slant::detail::fmt_num(r.train_loss) << ','
           << slant::detail::fmt_num(r.val_dsc) << '\n';
    slant::detail::write_text(path, os.str());
}

inline void make_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
}

inline TrainConfig fold_config(const ExperimentSpec& spec, int fold) {
    TrainConfig c = spec.train;
    c.seed = mix_seed(spec.seed, static_cast<std::uint64_t>(fold) + 1);
    return c;
}

}  // namespace detail

inline int cmd_pretrain(const std::filesystem::path& spec_path, const std::filesystem::path& out_dir, int fold,
                        std::optional<std::uint64_t> seed, unsigned threads, Streams io) {
    const auto spec = detail::load_spec_with_overrides(spec_path, seed, threads);
    const auto adult = slant::detail::materialize(slant::detail::seeded(spec.adult, spec.seed, slant::detail::adult_slot), CohortTag::original, "adult", spec.vocabulary, threads);
    const auto split = split_ids(slant::detail::ids_of(adult), fold, spec.train);
    const auto plan = plan_tiles(adult.front().image.dims(), spec.tiles_per_axis, spec.tile_shape);
    TrainConfig cfg = detail::fold_config(spec, fold);
    cfg.epochs = spec.pretrain_epochs;
    cfg.lr = spec.pretrain_lr;
    cfg.ce_weight = spec.pretrain_ce_weight;
    std::vector<TrainLogRow> log;
    const auto model = pretrain(examples_from(select_subjects(adult, split.train_ids)),
                                examples_from(select_subjects(adult, split.validation_ids)), plan, spec.network, spec.vocabulary,
                                cfg, fold, &log);
    detail::make_dir(out_dir);
    save_checkpoint(model, out_dir / "model.tbnn");
    detail::write_training_log(log, out_dir / "training_log.csv");
    io.out << "pretrain: fold " << fold << ", selected epoch " << model.selected_epoch << ", validation DSC "
           << model.validation_curve[static_cast<std::size_t>(model.selected_epoch - 1)] << "\n";
    return ok;
}

inline int cmd_transfer(const std::filesystem::path& spec_path, const std::filesystem::path& model_path,
                        const std::filesystem::path& out_dir, const std::string& mode, int fold, std::optional<std::uint64_t> seed,
                        unsigned threads, Streams io) {
    const auto spec = detail::load_spec_with_overrides(spec_path, seed, threads);
    const TrainedModel base = load_checkpoint(model_path);
    TrainConfig cfg = detail::fold_config(spec, fold);
    if (mode == "new_only")
        cfg.mix_mode = MixMode::new_only;
    else if (mode == "augmented")
        cfg.mix_mode = MixMode::augmented;
    else
        fail(ErrorKind::invalid_argument, "unknown transfer mode \"" + mode + "\" (expected new_only or augmented)");

    const bool contrast = spec.kind == ExperimentKind::contrast;
    const auto fresh = slant::detail::materialize(slant::detail::seeded(spec.new_cohort, spec.seed, slant::detail::new_slot), contrast ? CohortTag::contrast_pair : CohortTag::new_cohort,
                                                  contrast ? "pair" : "new", spec.vocabulary, threads);
    const auto n_split = split_ids(slant::detail::ids_of(fresh), fold, spec.train);
    auto examples = [&](const std::vector<std::string>& ids) {
        std::vector<Example> out;
        for (const auto* s : select_subjects(fresh, ids)) {
            if (contrast) {
                if (!s->post_image) fail(ErrorKind::invalid_argument, "subject " + s->id + " has no paired image");
                out.push_back({s->id, *s->post_image, segment_volume(base, s->image, threads)});
            } else {
                if (!s->truth) fail(ErrorKind::invalid_argument, "subject " + s->id + " has no truth labels");
                out.push_back({s->id, s->image, *s->truth});
            }
        }
        return out;
    };
    std::vector<Example> orig_train;
    if (cfg.mix_mode == MixMode::augmented) {
        const auto original = slant::detail::materialize(slant::detail::seeded(spec.original, spec.seed, slant::detail::original_slot), CohortTag::original, "orig", spec.vocabulary, threads);
        const auto o_split = split_ids(slant::detail::ids_of(original), fold, spec.train);
        orig_train = examples_from(select_subjects(original, o_split.train_ids));
    }
    std::vector<TrainLogRow> log;
    const auto model = transfer_learn(base, examples(n_split.train_ids), examples(n_split.validation_ids), orig_train, cfg, fold, &log);
    detail::make_dir(out_dir);
    save_checkpoint(model, out_dir / "model.tbnn");
    detail::write_training_log(log, out_dir / "training_log.csv");
    io.out << "transfer (" << mode << "): fold " << fold << ", selected epoch " << model.selected_epoch << "\n";
    return ok;
}

// ---------------------------------------------------------------------------
// segment / eval

inline int cmd_segment(const std::filesystem::path& model_path, const std::filesystem::path& image_path,
                       const std::filesystem::path& out_path, unsigned threads, Streams io) {
    const TrainedModel model = load_checkpoint(model_path);
    const Volume3D image = read_volume(image_path);
    const LabelMap seg = segment_volume(model, image, threads);
    if (out_path.has_parent_path()) detail::make_dir(out_path.parent_path());
    write_label_map(seg, out_path);
    io.out << "segment: wrote " << out_path.string() << " (" << dims_string(seg.dims) << ")\n";
    return ok;
}

/// Per-subject DSC of a model on a manifest: pDSC against the labels, or
/// rDSC between the image and its paired image.
inline int cmd_eval(const std::filesystem::path& model_path, const std::filesystem::path& manifest_path, const std::string& kind,
                    const std::filesystem::path& out_dir, unsigned threads, Streams io) {
    const TrainedModel model = load_checkpoint(model_path);
    const auto manifest = load_manifest(manifest_path);
    manifest.validate();
    const auto subjects = load_subjects(manifest, model.classes);
    std::vector<const Subject*> ptrs;
    for (const auto& s : subjects) ptrs.push_back(&s);
    const Segmenter seg = [&](const Volume3D& v) { return segment_volume(model, v, threads); };
    std::vector<DscRecord> records;
    if (kind == "pDSC")
        records = evaluate_segmenter(seg, ptrs, DscKind::pDSC);
    else if (kind == "rDSC")
        records = evaluate_reproducibility(seg, ptrs);
    else
        fail(ErrorKind::invalid_argument, "unknown metric kind \"" + kind + "\" (expected pDSC or rDSC)");

    std::ostringstream os;
    os << "subject_id,kind,label_id,dsc\n";
    std::vector<double> means;
    for (const auto& r : records) {
        means.push_back(r.mean_dsc);
        for (const auto& [id, d] : r.per_label)
            os << r.subject_id << ',' << dsc_kind_name(r.kind) << ',' << id << ',' << (d ? slant::detail::fmt_num(*d) : std::string()) << '\n';
    }
    detail::make_dir(out_dir);
    slant::detail::write_text(out_dir / "metrics.csv", os.str());
    const auto ms = mean_sd(means);
    io.out << "eval: " << kind << " mean " << ms.mean << " sd " << ms.sd << " over " << ms.n << " subjects\n";
    return ok;
}

// ---------------------------------------------------------------------------
// stats

/// Paired Wilcoxon test. Input JSON: {"x": [...], "y": [...], "m": 1, "alpha": 0.05}.
inline int cmd_stats(const std::filesystem::path& spec_path, const std::string& format, Streams io) {
    const auto j = read_json_file(spec_path);
    std::vector<double> x, y;
    int m = 1;
    double alpha = 0.05;
    try {
        x = j.at("x").get<std::vector<double>>();
        y = j.at("y").get<std::vector<double>>();
        m = j.value("m", m);
        alpha = j.value("alpha", alpha);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::invalid_argument, std::string("malformed stats input: ") + e.what());
    }
    const auto r = wilcoxon_signed_rank(x, y, m, alpha);
    if (format == "json") {
        io.out << nlohmann::json{{"n_pairs", r.n_pairs}, {"W", r.w_plus}, {"p", r.p_two_sided}, {"exact", r.exact},
                                 {"m", r.n_comparisons}, {"threshold", r.bonferroni_alpha}, {"significant", r.significant}}
                      .dump(2)
               << "\n";
    } else if (format == "md") {
        io.out << "| n | W | p | threshold | significant |\n|---|---|---|---|---|\n"
               << "| " << r.n_pairs << " | " << r.w_plus << " | " << r.p_two_sided << " | " << r.bonferroni_alpha << " | "
               << (r.significant ? "*" : "") << " |\n";
    } else if (format == "csv") {
        io.out << "n_pairs,W,p,threshold,significant\n"
               << r.n_pairs << ',' << slant::detail::fmt_num(r.w_plus) << ',' << slant::detail::fmt_num(r.p_two_sided) << ','
               << slant::detail::fmt_num(r.bonferroni_alpha) << ',' << (r.significant ? "true" : "false") << "\n";
    } else {
        fail(ErrorKind::invalid_argument, "unknown format \"" + format + "\"");
    }
    return ok;
}

// ---------------------------------------------------------------------------
// experiment / report

inline int cmd_experiment(const std::filesystem::path& spec_path, const std::optional<std::filesystem::path>& out_dir,
                          std::optional<std::uint64_t> seed, unsigned threads, bool quiet, Streams io) {
    ExperimentSpec spec = detail::load_spec_with_overrides(spec_path, seed, threads);
    if (out_dir) spec.output_dir = *out_dir;
    if (spec.output_dir.empty()) fail(ErrorKind::invalid_argument, "no output directory (use --out or output_dir in the spec)");
    detail::make_dir(spec.output_dir);
    ProgressFn progress;
    if (!quiet) progress = [&](const std::string& msg) { io.err << "[experiment] " << msg << "\n"; };
    const auto rep = run_experiment(spec, progress);
    write_report(rep, spec.output_dir);
    io.out << render_markdown(report_json(rep));
    return ok;
}

inline int cmd_report(const std::filesystem::path& report_path, const std::string& format, const std::filesystem::path& out_dir,
                      Streams io) {
    const ReportFormat f = parse_report_format(format);
    const auto rep = load_report(report_path);
    const auto files = render_report(rep, f, out_dir);
    if (f == ReportFormat::md) io.out << render_markdown(rep);
    for (const auto& p : files) io.out << "report: wrote " << p.string() << "\n";
    return ok;
}

// ---------------------------------------------------------------------------
// dispatch

/// Runs `fn`, translating library errors into exit codes.
inline int guarded(const std::function<int()>& fn, std::ostream& err) {
    try {
        return fn();
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return io_error;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return usage;
    } catch (const std::bad_alloc&) {
        err << "error: out of memory\n";
        return io_error;
    }
}

inline int run(int argc, const char* const* argv, Streams io = {}) {
    CLI::App app{"Tiled segmentation and transfer-learning experiments on synthetic phantoms", "slant"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for all subcommands");

    std::string spec, out, model, image, manifest, report_path, format = "md", mode = "new_only", kind = "pDSC";
    std::optional<std::uint64_t> seed;
    int threads = 1, fold = 0;
    bool quiet = false;

    auto add_common = [&](CLI::App* sub, bool with_seed) {
        sub->add_option("--threads", threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
        if (with_seed) sub->add_option("--seed", seed, "Override the spec's seed");
    };

    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic cohort");
    phantom->add_option("--spec", spec, "Phantom spec (JSON)")->required();
    phantom->add_option("--out", out, "Output directory")->required();
    add_common(phantom, true);

    auto* pre = app.add_subcommand("pretrain", "Pretrain tile networks on the adult cohort of an experiment spec");
    pre->add_option("--spec", spec, "Experiment spec (JSON)")->required();
    pre->add_option("--out", out, "Output directory")->required();
    pre->add_option("--fold", fold, "Cross-validation fold");
    add_common(pre, true);

    auto* tl = app.add_subcommand("transfer", "Transfer-learn a pretrained model on the new cohort");
    tl->add_option("--spec", spec, "Experiment spec (JSON)")->required();
    tl->add_option("--model", model, "Pretrained checkpoint")->required();
    tl->add_option("--out", out, "Output directory")->required();
    tl->add_option("--mode", mode, "new_only or augmented");
    tl->add_option("--fold", fold, "Cross-validation fold");
    add_common(tl, true);

    auto* seg = app.add_subcommand("segment", "Segment one volume with a checkpoint");
    seg->add_option("--model", model, "Checkpoint")->required();
    seg->add_option("--image", image, "Input NIfTI volume")->required();
    seg->add_option("--out", out, "Output label file")->required();
    add_common(seg, false);

    auto* ev = app.add_subcommand("eval", "Per-subject DSC of a checkpoint on a cohort manifest");
    ev->add_option("--model", model, "Checkpoint")->required();
    ev->add_option("--manifest,--spec", manifest, "Cohort manifest (JSON)")->required();
    ev->add_option("--kind", kind, "pDSC or rDSC");
    ev->add_option("--out", out, "Output directory")->required();
    add_common(ev, false);

    auto* st = app.add_subcommand("stats", "Paired Wilcoxon signed-rank test with Bonferroni threshold");
    st->add_option("--spec", spec, "Input JSON with x, y, m, alpha")->required();
    st->add_option("--format", format, "csv, json or md");

    auto* ex = app.add_subcommand("experiment", "Run a cross-validated transfer-learning experiment");
    ex->add_option("--spec", spec, "Experiment spec (JSON)")->required();
    ex->add_option("--out", out, "Output directory (overrides output_dir)");
    ex->add_flag("--quiet", quiet, "No progress lines");
    add_common(ex, true);

    auto* rp = app.add_subcommand("report", "Render a saved report as tables and plot data");
    rp->add_option("--report,--spec", report_path, "report.json")->required();
    rp->add_option("--format", format, "csv, json or md");
    rp->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, io.out, io.err);
        return code == 0 ? ok : usage;
    }

    const unsigned n_threads = resolve_threads(threads);
    return guarded(
        [&]() -> int {
            if (*phantom) return cmd_phantom(spec, out, seed, n_threads, io);
            if (*pre) return cmd_pretrain(spec, out, fold, seed, n_threads, io);
            if (*tl) return cmd_transfer(spec, model, out, mode, fold, seed, n_threads, io);
            if (*seg) return cmd_segment(model, image, out, n_threads, io);
            if (*ev) return cmd_eval(model, manifest, kind, out, n_threads, io);
            if (*st) return cmd_stats(spec, format, io);
            if (*ex)
                return cmd_experiment(spec, out.empty() ? std::nullopt : std::optional<std::filesystem::path>(out), seed, n_threads,
                                      quiet, io);
            return cmd_report(report_path, format, out, io);
        },
        io.err);
}

}  // namespace slant::cli
