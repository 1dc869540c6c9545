#pragma once
// Renders a saved experiment report (report.json) as figure-panel tables,
// gnuplot whisker data, a volume-change scatter, or a markdown summary.
//
// Panels follow the three comparisons of the transfer-learning figure:
//   A  new-cohort pDSC      (pediatric-style experiments)
//   B  new-cohort rDSC      (contrast-style experiments)
//   C  original-cohort DSC  (forgetting on the adult domain)

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "evaluation.hpp"
#include "experiment.hpp"
#include "volio.hpp"

namespace slant {

enum class ReportFormat { csv, json, md };

inline ReportFormat parse_report_format(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    if (s == "md") return ReportFormat::md;
    fail(ErrorKind::invalid_argument, "unknown report format \"" + s + "\" (expected csv, json or md)");
}

struct PanelSeries {
    std::string regime;
    std::vector<int> folds;
    std::vector<std::string> subjects;
    std::vector<double> values;
};

struct Panel {
    std::string key;     // "A", "B" or "C"
    std::string cohort;  // "new" or "original"
    std::string metric;  // "pDSC", "rDSC" or "DSC"
    std::vector<PanelSeries> series;  // baseline, new_only, augmented
};

inline nlohmann::json load_report(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::invalid_argument, "cannot parse report " + path.string() + ": " + e.what());
    }
}

/// Checks the parts of the report the renderers rely on; an empty report
/// (no folds or no results) is rejected.
inline void check_report(const nlohmann::json& rep) {
    if (!rep.is_object() || rep.value("format", std::string()) != "slant-report")
        fail(ErrorKind::invalid_argument, "not a slant report");
    if (rep.value("folds", 0) < 1 || !rep.contains("results") || rep["results"].empty())
        fail(ErrorKind::invalid_argument, "report is empty (0 folds)");
}

inline std::vector<Panel> report_panels(const nlohmann::json& rep) {
    check_report(rep);
    const std::string new_metric = rep.value("new_metric", std::string("pDSC"));
    std::vector<Panel> panels{{new_metric == "rDSC" ? "B" : "A", "new", new_metric, {}}, {"C", "original", "DSC", {}}};
    for (auto& p : panels) {
        for (const char* r : {"baseline", "new_only", "augmented"}) {
            PanelSeries s{r, {}, {}, {}};
            for (const auto& res : rep["results"]) {
                if (res["regime"] != r || res["cohort"] != p.cohort) continue;
                for (const auto& subj : res["subjects"]) {
                    s.folds.push_back(res["fold"].get<int>());
                    s.subjects.push_back(subj["id"].get<std::string>());
                    s.values.push_back(subj["mean_dsc"].get<double>());
                }
            }
            p.series.push_back(std::move(s));
        }
    }
    return panels;
}

/// Significant pairwise comparisons of one cohort, e.g. "new_only vs baseline".
inline std::vector<nlohmann::json> panel_stats(const nlohmann::json& rep, const std::string& cohort) {
    std::vector<nlohmann::json> out;
    if (!rep.contains("stats")) return out;
    for (const auto& s : rep["stats"])
        if (s["cohort"] == cohort) out.push_back(s);
    return out;
}

namespace detail {

inline std::string fixed(double v, int digits) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

inline std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

}  // namespace detail

inline std::string render_markdown(const nlohmann::json& rep) {
    const auto panels = report_panels(rep);
    std::ostringstream os;
    const auto& spec = rep.contains("spec") ? rep["spec"] : nlohmann::json::object();
    os << "# " << spec.value("name", std::string("experiment")) << " (" << spec.value("kind", std::string("?")) << ", "
       << rep["folds"].get<int>() << " folds)\n";
    for (const auto& p : panels) {
        const auto stats = panel_stats(rep, p.cohort);
        double threshold = 0.05;
        if (!stats.empty()) threshold = stats.front()["threshold"].get<double>();
        os << "\n## Panel " << p.key << ": " << (p.cohort == "new" ? "new cohort " : "original cohort ") << p.metric << "\n\n";
        os << "| regime | mean ± sd | n |\n|---|---|---|\n";
        for (const auto& s : p.series) {
            const auto ms = mean_sd(s.values);
            std::string stars;
            for (const auto& st : stats)
                if (st["significant"].get<bool>() && st["comparison"].get<std::string>().rfind(s.regime + " vs ", 0) == 0) stars += "*";
            os << "| " << s.regime << " | " << detail::fixed(ms.mean, 3) << " ± " << detail::fixed(ms.sd, 3) << stars << " | " << ms.n
               << " |\n";
        }
        if (!stats.empty()) {
            os << "\n| comparison | W | p | significant (p < " << detail::fixed(threshold, 4) << ") |\n|---|---|---|---|\n";
            for (const auto& st : stats)
                os << "| " << st["comparison"].get<std::string>() << " | " << st["W"].get<double>() << " | " << detail::sci(st["p"].get<double>())
                   << " | " << (st["significant"].get<bool>() ? "*" : "") << " |\n";
        }
    }
    if (rep.contains("volume_change")) {
        const auto& vc = rep["volume_change"];
        os << "\n## Volume change of label " << vc["label"].get<int>() << " (pre vs post)\n\n";
        os << "| regime | mean % change | mean abs % change | RMSE (cm³) | n |\n|---|---|---|---|---|\n";
        for (const auto& r : vc["regimes"]) {
            auto num = [&](const char* k) { return r[k].is_null() ? std::string("n/a") : detail::fixed(r[k].get<double>(), 3); };
            os << "| " << r["regime"].get<std::string>() << " | " << num("mean_percent_change") << " | " << num("mean_abs_percent_change")
               << " | " << (r["rmse_cm3"].is_null() ? std::string("n/a") : detail::fixed(r["rmse_cm3"].get<double>(), 4)) << " | "
               << r["n_defined"].get<int>() << " |\n";
        }
    }
    return os.str();
}

/// Plot data as one JSON document: per panel, whisker statistics and raw
/// values per regime; plus the volume-change scatter when present.
inline nlohmann::json render_plot_json(const nlohmann::json& rep) {
    nlohmann::json out;
    nlohmann::json panels = nlohmann::json::object();
    for (const auto& p : report_panels(rep)) {
        nlohmann::json series = nlohmann::json::array();
        for (const auto& s : p.series) {
            const auto ms = mean_sd(s.values);
            series.push_back({{"regime", s.regime}, {"mean", ms.mean}, {"sd", ms.sd}, {"n", ms.n}, {"values", s.values}});
        }
        panels[p.key] = {{"cohort", p.cohort}, {"metric", p.metric}, {"series", series}, {"stats", panel_stats(rep, p.cohort)}};
    }
    out["panels"] = panels;
    if (rep.contains("volume_change")) {
        nlohmann::json scatter = nlohmann::json::array();
        for (const auto& r : rep["volume_change"]["regimes"])
            for (const auto& rec : r["records"])
                scatter.push_back({{"regime", r["regime"]}, {"subject_id", rec["subject_id"]}, {"pre_cm3", rec["pre_cm3"]},
                                   {"post_cm3", rec["post_cm3"]}});
        out["volume_change"] = {{"label", rep["volume_change"]["label"]}, {"scatter", scatter}};
    }
    return out;
}

/// Writes the rendering into `out_dir` and returns the files written.
/// csv: one panel_<key>.csv per panel, whiskers.dat and, for contrast
/// reports, volume_change.dat (gnuplot-ready, blank line between regimes).
/// json: plot_data.json. md: report.md.
inline std::vector<std::filesystem::path> render_report(const nlohmann::json& rep, ReportFormat format,
                                                        const std::filesystem::path& out_dir) {
    check_report(rep);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    auto emit = [&](const std::string& name, const std::string& text) {
        const auto path = out_dir / name;
        detail::write_text(path, text);
        written.push_back(path);
    };

    if (format == ReportFormat::md) {
        emit("report.md", render_markdown(rep));
        return written;
    }
    if (format == ReportFormat::json) {
        emit("plot_data.json", render_plot_json(rep).dump(2) + "\n");
        return written;
    }

    const auto panels = report_panels(rep);
    std::ostringstream wh;
    wh << "# panel regime_index regime mean sd n\n";
    for (const auto& p : panels) {
        std::ostringstream os;
        os << "regime,fold,subject_id," << p.metric << "\n";
        for (const auto& s : p.series)
            for (std::size_t i = 0; i < s.values.size(); ++i)
                os << s.regime << ',' << s.folds[i] << ',' << s.subjects[i] << ',' << detail::fmt_num(s.values[i]) << '\n';
        emit("panel_" + p.key + ".csv", os.str());
        for (std::size_t r = 0; r < p.series.size(); ++r) {
            const auto ms = mean_sd(p.series[r].values);
            wh << p.key << ' ' << r << ' ' << p.series[r].regime << ' ' << detail::fmt_num(ms.mean) << ' ' << detail::fmt_num(ms.sd) << ' '
               << ms.n << '\n';
        }
    }
    emit("whiskers.dat", wh.str());

    if (rep.contains("volume_change")) {
        std::ostringstream vc;
        vc << "# regime subject_id pre_cm3 post_cm3\n";
        bool first = true;
        for (const auto& r : rep["volume_change"]["regimes"]) {
            if (!first) vc << "\n\n";
            first = false;
            for (const auto& rec : r["records"])
                vc << r["regime"].get<std::string>() << ' ' << rec["subject_id"].get<std::string>() << ' '
                   << detail::fmt_num(rec["pre_cm3"].get<double>()) << ' ' << detail::fmt_num(rec["post_cm3"].get<double>()) << '\n';
        }
        emit("volume_change.dat", vc.str());
    }
    return written;
}

}  // namespace slant
