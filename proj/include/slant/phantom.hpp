#pragma once
// Deterministic synthetic head phantoms: a seeded, smoothly deformed nest of
// ellipsoidal shells (CSF rim > GM shell > WM core) with a small spherical
// HC-analog embedded in the WM core.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "volio.hpp"

namespace slant {

namespace label {
inline constexpr int background = 0;
inline constexpr int csf_rim = 1;
inline constexpr int gm_shell = 2;
inline constexpr int wm_core = 3;
inline constexpr int hc_analog = 4;
}  // namespace label

inline std::vector<LabelEntry> phantom_vocabulary() {
    return {{label::background, "background"},
            {label::csf_rim, "csf_rim"},
            {label::gm_shell, "gm_shell"},
            {label::wm_core, "wm_core"},
            {label::hc_analog, "hc_analog"}};
}

inline constexpr int kPresetVersion = 1;

struct PhantomSpec {
    Dims3 dims{32, 32, 32};
    Spacing3 voxel_size{1.0, 1.0, 1.0};
    double scale = 1.0;
    double gm_intensity = 0.6;
    double wm_intensity = 1.0;
    double csf_intensity = 0.3;
    double hc_intensity = 0.55;
    double noise_sigma = 0.05;
    double deform_amplitude = 1.0;
    double enhancement_delta = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        for (int a = 0; a < 3; ++a) require(dims[a] >= 1 && voxel_size[a] > 0.0, "phantom dims and voxel sizes must be positive");
        require(scale > 0.0 && scale <= 1.0, "phantom scale must lie in (0, 1]");
        require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
        require(deform_amplitude >= 0.0, "deform_amplitude must be >= 0");
        for (double v : {gm_intensity, wm_intensity, csf_intensity, hc_intensity, enhancement_delta})
            require(std::isfinite(v), "phantom intensities must be finite");
    }

    double intensity_of(int l) const {
        switch (l) {
            case label::csf_rim: return csf_intensity;
            case label::gm_shell: return gm_intensity;
            case label::wm_core: return wm_intensity;
            case label::hc_analog: return hc_intensity;
            default: return 0.0;
        }
    }
};

inline PhantomSpec adult_preset() { return PhantomSpec{}; }

inline PhantomSpec pediatric_preset() {
    PhantomSpec s;
    s.scale = 0.75;
    s.gm_intensity = 0.8;
    return s;
}

inline PhantomSpec contrast_preset() {
    PhantomSpec s;
    s.enhancement_delta = 0.5;
    return s;
}

inline PhantomSpec preset(const std::string& name) {
    if (name == "adult") return adult_preset();
    if (name == "pediatric") return pediatric_preset();
    if (name == "contrast") return contrast_preset();
    fail(ErrorKind::invalid_argument, "unknown phantom preset \"" + name + "\"");
}

inline nlohmann::json to_json(const PhantomSpec& s) {
    return {{"dims", s.dims},
            {"voxel_size", s.voxel_size},
            {"scale", s.scale},
            {"gm_intensity", s.gm_intensity},
            {"wm_intensity", s.wm_intensity},
            {"csf_intensity", s.csf_intensity},
            {"hc_intensity", s.hc_intensity},
            {"noise_sigma", s.noise_sigma},
            {"deform_amplitude", s.deform_amplitude},
            {"enhancement_delta", s.enhancement_delta},
            {"seed", s.seed}};
}

/// Starts from `j["preset"]` (default "adult") and applies any listed fields.
inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
    try {
        PhantomSpec s = preset(j.value("preset", std::string("adult")));
        if (j.contains("dims")) s.dims = j["dims"].get<Dims3>();
        if (j.contains("voxel_size")) s.voxel_size = j["voxel_size"].get<Spacing3>();
        s.scale = j.value("scale", s.scale);
        s.gm_intensity = j.value("gm_intensity", s.gm_intensity);
        s.wm_intensity = j.value("wm_intensity", s.wm_intensity);
        s.csf_intensity = j.value("csf_intensity", s.csf_intensity);
        s.hc_intensity = j.value("hc_intensity", s.hc_intensity);
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        s.deform_amplitude = j.value("deform_amplitude", s.deform_amplitude);
        s.enhancement_delta = j.value("enhancement_delta", s.enhancement_delta);
        s.seed = j.value("seed", s.seed);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::invalid_argument, std::string("malformed phantom spec: ") + e.what());
    }
}

struct PhantomSubject {
    Volume3D image;
    std::optional<Volume3D> post_image;
    LabelMap truth;
    std::vector<std::uint8_t> enhancing_mask;  // contrast pairs only
};

namespace detail {

struct PhantomGeometry {
    std::array<double, 3> center{};
    std::array<double, 3> semi_axes{};
    double wm_limit = 0.58;  // normalised radius of the WM core
    double gm_limit = 0.84;  // normalised radius of the GM shell's outer surface
    std::array<double, 3> hc_center{};
    double hc_radius = 0.0;
    // low-frequency displacement: u_i(p) = A sin(2 pi f_i (p . dir_i) / D + phase_i)
    std::array<std::array<double, 3>, 3> wave_dir{};
    std::array<double, 3> wave_freq{};
    std::array<double, 3> wave_phase{};

    explicit PhantomGeometry(const PhantomSpec& spec) {
        Rng rng(spec.seed);
        const std::array<double, 3> base{0.40, 0.44, 0.38};
        for (int a = 0; a < 3; ++a) {
            center[a] = 0.5 * (spec.dims[a] - 1) + rng.uniform(-1.0, 1.0);
            semi_axes[a] = base[a] * spec.dims[a] * spec.scale * (1.0 + rng.uniform(-0.06, 0.06));
        }
        wm_limit = 0.58 + rng.uniform(-0.03, 0.03);
        gm_limit = 0.84 + rng.uniform(-0.03, 0.03);

        // HC-analog: lateral offset into one hemisphere of the WM core.
        const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const std::array<double, 3> offset{side * 0.42, rng.uniform(-0.12, 0.12), rng.uniform(-0.25, -0.05)};
        for (int a = 0; a < 3; ++a) hc_center[a] = center[a] + offset[a] * wm_limit * semi_axes[a];
        const double min_axis = std::min({semi_axes[0], semi_axes[1], semi_axes[2]});
        hc_radius = (0.30 + rng.uniform(0.0, 0.05)) * wm_limit * min_axis;

        const double mean_dim = (spec.dims[0] + spec.dims[1] + spec.dims[2]) / 3.0;
        for (int i = 0; i < 3; ++i) {
            double norm = 0.0;
            for (int a = 0; a < 3; ++a) {
                wave_dir[i][a] = rng.uniform(-1.0, 1.0);
                norm += wave_dir[i][a] * wave_dir[i][a];
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            for (int a = 0; a < 3; ++a) wave_dir[i][a] /= norm;
            wave_freq[i] = rng.uniform(0.5, 1.5) / mean_dim;
            wave_phase[i] = rng.uniform(0.0, 6.283185307179586);
        }
    }

    int label_at(const PhantomSpec& spec, int x, int y, int z) const {
        const std::array<double, 3> p{double(x), double(y), double(z)};
        std::array<double, 3> q{};
        for (int i = 0; i < 3; ++i) {
            const double proj = p[0] * wave_dir[i][0] + p[1] * wave_dir[i][1] + p[2] * wave_dir[i][2];
            q[i] = p[i] + spec.deform_amplitude * std::sin(6.283185307179586 * wave_freq[i] * proj + wave_phase[i]);
        }
        double hc2 = 0.0, rho2 = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double dh = q[a] - hc_center[a];
            hc2 += dh * dh;
            const double dn = (q[a] - center[a]) / semi_axes[a];
            rho2 += dn * dn;
        }
        if (hc2 <= hc_radius * hc_radius) return label::hc_analog;
        if (rho2 <= wm_limit * wm_limit) return label::wm_core;
        if (rho2 <= gm_limit * gm_limit) return label::gm_shell;
        if (rho2 <= 1.0) return label::csf_rim;
        return label::background;
    }
};

inline LabelMap phantom_truth(const PhantomSpec& spec) {
    const PhantomGeometry geo(spec);
    LabelMap truth(spec.dims, spec.voxel_size, phantom_vocabulary());
    std::array<std::size_t, 5> counts{};
    for (int z = 0; z < spec.dims[2]; ++z)
        for (int y = 0; y < spec.dims[1]; ++y)
            for (int x = 0; x < spec.dims[0]; ++x) {
                const int l = geo.label_at(spec, x, y, z);
                truth.at(x, y, z) = l;
                ++counts[static_cast<std::size_t>(l)];
            }
    for (int l = 1; l <= 4; ++l)
        if (counts[static_cast<std::size_t>(l)] < 8)
            fail(ErrorKind::invalid_argument, "phantom too small: label " + std::to_string(l) + " has only " +
                                                  std::to_string(counts[static_cast<std::size_t>(l)]) + " voxels (need 8)");
    return truth;
}

inline Volume3D render(const PhantomSpec& spec, const LabelMap& truth, const std::vector<std::uint8_t>* enhance,
                       std::uint64_t noise_seed) {
    Volume3D img(spec.dims, spec.voxel_size);
    Rng noise(noise_seed);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        double v = spec.intensity_of(truth.labels[i]);
        if (enhance && (*enhance)[i]) v += spec.enhancement_delta;
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise.normal();
        img.data[i] = static_cast<float>(v);
    }
    return img;
}

inline std::uint64_t noise_seed_for(const PhantomSpec& spec) { return mix_seed(spec.seed, 0x4E4F495345ULL); }

}  // namespace detail

inline PhantomSubject generate_subject(const PhantomSpec& spec) {
    spec.validate();
    PhantomSubject s;
    s.truth = detail::phantom_truth(spec);
    s.image = detail::render(spec, s.truth, nullptr, detail::noise_seed_for(spec));
    return s;
}

/// The pre image matches generate_subject. The post image shares the noise
/// realisation and adds enhancement_delta on the CSF rim plus a seeded 10% of
/// the GM shell.
inline PhantomSubject generate_contrast_pair(const PhantomSpec& spec) {
    spec.validate();
    require(spec.enhancement_delta != 0.0, "contrast pairs require a non-zero enhancement_delta");
    PhantomSubject s = generate_subject(spec);

    std::vector<std::size_t> gm;
    s.enhancing_mask.assign(s.truth.labels.size(), 0);
    for (std::size_t i = 0; i < s.truth.labels.size(); ++i) {
        if (s.truth.labels[i] == label::csf_rim) s.enhancing_mask[i] = 1;
        if (s.truth.labels[i] == label::gm_shell) gm.push_back(i);
    }
    Rng pick(mix_seed(spec.seed, 0x454E48ULL));
    pick.shuffle(gm);
    const std::size_t n_enhanced = static_cast<std::size_t>(std::llround(0.10 * static_cast<double>(gm.size())));
    for (std::size_t k = 0; k < n_enhanced; ++k) s.enhancing_mask[gm[k]] = 1;

    s.post_image = detail::render(spec, s.truth, &s.enhancing_mask, detail::noise_seed_for(spec));
    return s;
}

struct GeneratedCohort {
    std::vector<PhantomSubject> subjects;
    CohortManifest manifest;
};

/// Subject i uses seed spec.seed + i. When `out_dir` is non-empty, images,
/// labels and `manifest.json` are written there.
inline GeneratedCohort generate_cohort(const PhantomSpec& spec, int n, CohortTag tag,
                                       const std::filesystem::path& out_dir = {}, const std::string& prefix = "subj",
                                       unsigned threads = 1) {
    require(n >= 1, "cohort size must be >= 1");
    spec.validate();
    GeneratedCohort cohort;
    cohort.subjects.resize(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
        PhantomSpec s = spec;
        s.seed = spec.seed + i;
        cohort.subjects[i] = tag == CohortTag::contrast_pair ? generate_contrast_pair(s) : generate_subject(s);
    });

    if (!out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec) fail(ErrorKind::io, "cannot create " + out_dir.string() + ": " + ec.message());
    }
    for (int i = 0; i < n; ++i) {
        char idbuf[64];
        std::snprintf(idbuf, sizeof idbuf, "%s-%03d", prefix.c_str(), i);
        const std::string id = idbuf;
        SubjectRecord r;
        r.subject_id = id;
        r.cohort = tag;
        r.image_path = (out_dir / (id + "_image.nii")).string();
        r.label_path = (out_dir / (id + "_labels.nii")).string();
        if (tag == CohortTag::contrast_pair) r.paired_image_path = (out_dir / (id + "_post.nii")).string();
        if (!out_dir.empty()) {
            const auto& s = cohort.subjects[static_cast<std::size_t>(i)];
            write_volume(s.image, r.image_path);
            write_label_map(s.truth, *r.label_path);
            if (s.post_image) write_volume(*s.post_image, *r.paired_image_path);
        }
        cohort.manifest.subjects.push_back(std::move(r));
    }
    if (!out_dir.empty()) save_manifest(cohort.manifest, out_dir / "manifest.json");
    return cohort;
}

}  // namespace slant
