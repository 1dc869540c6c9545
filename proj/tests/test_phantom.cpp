#include <catch_amalgamated.hpp>

#include <slant/phantom.hpp>

#include "support.hpp"

using namespace slant;

namespace {

PhantomSpec noiseless(PhantomSpec s, std::uint64_t seed = 11) {
    s.noise_sigma = 0.0;
    s.seed = seed;
    return s;
}

std::size_t brain_voxels(const LabelMap& m) {
    return static_cast<std::size_t>(std::count_if(m.labels.begin(), m.labels.end(), [](int l) { return l != 0; }));
}

// Labels of the six face neighbours that exist.
template <class Fn>
void for_each_neighbour(const LabelMap& m, int x, int y, int z, Fn&& fn) {
    const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (const auto& o : off) {
        const int a = x + o[0], b = y + o[1], c = z + o[2];
        if (a < 0 || b < 0 || c < 0 || a >= m.dims[0] || b >= m.dims[1] || c >= m.dims[2]) continue;
        fn(m.at(a, b, c));
    }
}

}  // namespace

TEST_CASE("same spec and seed give identical subjects") {
    const auto a = generate_subject(adult_preset());
    const auto b = generate_subject(adult_preset());
    CHECK(same_volume(a.image, b.image));
    CHECK(a.truth == b.truth);
}

TEST_CASE("vocabulary and per-label voxel counts") {
    const auto s = generate_subject(adult_preset());
    CHECK(s.truth.label_ids() == std::vector<int>{0, 1, 2, 3, 4});
    std::array<int, 5> counts{};
    for (int l : s.truth.labels) ++counts[static_cast<std::size_t>(l)];
    for (int l = 1; l <= 4; ++l) CHECK(counts[static_cast<std::size_t>(l)] >= 8);
    CHECK(s.image.dims() == s.truth.dims);
}

TEST_CASE("pediatric scale 0.8 shrinks the brain mask by about 0.8 cubed") {
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        PhantomSpec ped = noiseless(adult_preset(), seed);
        ped.scale = 0.8;
        const double ratio = double(brain_voxels(generate_subject(ped).truth)) /
                             double(brain_voxels(generate_subject(noiseless(adult_preset(), seed)).truth));
        CHECK(ratio == Catch::Approx(0.512).epsilon(0.10));
    }
}

TEST_CASE("noise 0 renders the configured intensity per label exactly") {
    const PhantomSpec spec = noiseless(adult_preset());
    const auto s = generate_subject(spec);
    for (std::size_t i = 0; i < s.image.data.size(); ++i)
        REQUIRE(s.image.data[i] == static_cast<float>(spec.intensity_of(s.truth.labels[i])));
}

TEST_CASE("CSF rim is the outermost shell and HC sits inside the WM core") {
    for (std::uint64_t seed : {1, 7, 42}) {
        const auto s = generate_subject(noiseless(pediatric_preset(), seed));
        const auto& m = s.truth;
        for (const auto& [x, y, z] : slant_test::enumerate_voxels(m.dims)) {
            const int l = m.at(x, y, z);
            for_each_neighbour(m, x, y, z, [&](int n) {
                if (l == label::background) CHECK((n == label::background || n == label::csf_rim));
                if (l == label::hc_analog) CHECK((n == label::hc_analog || n == label::wm_core));
            });
        }
    }
}

TEST_CASE("pediatric preset narrows the GM-WM intensity gap") {
    auto gap = [](const PhantomSpec& spec) {
        const auto s = generate_subject(spec);
        double gm = 0, wm = 0;
        int ng = 0, nw = 0;
        for (std::size_t i = 0; i < s.image.data.size(); ++i) {
            if (s.truth.labels[i] == label::gm_shell) gm += s.image.data[i], ++ng;
            if (s.truth.labels[i] == label::wm_core) wm += s.image.data[i], ++nw;
        }
        return std::abs(gm / ng - wm / nw);
    };
    CHECK(gap(noiseless(pediatric_preset())) < gap(noiseless(adult_preset())));
}

TEST_CASE("presets match the shipped config") {
    const auto j = nlohmann::json::parse(std::ifstream(std::string(SLANT_SOURCE_DIR) + "/config/phantom_presets.json"));
    CHECK(j.at("version").get<int>() == kPresetVersion);
    for (const std::string name : {"adult", "pediatric", "contrast"}) {
        nlohmann::json entry = j.at("presets").at(name);
        entry["preset"] = "adult";  // start from the adult defaults and apply every listed field
        const PhantomSpec from_file = phantom_spec_from_json(entry);
        const PhantomSpec in_code = preset(name);
        CHECK(to_json(from_file) == to_json(in_code));
    }
    CHECK(adult_preset().wm_intensity == 1.0);
    CHECK(adult_preset().gm_intensity == 0.6);
    CHECK(adult_preset().csf_intensity == 0.3);
    CHECK(adult_preset().hc_intensity == 0.55);
    CHECK(adult_preset().noise_sigma == 0.05);
    CHECK(pediatric_preset().scale == 0.75);
    CHECK(pediatric_preset().gm_intensity == 0.8);
    CHECK(contrast_preset().enhancement_delta == 0.5);
}

TEST_CASE("spec validation") {
    PhantomSpec s;
    s.scale = 0.0;
    CHECK_THROWS_AS(generate_subject(s), Error);
    s = PhantomSpec{};
    s.noise_sigma = -1.0;
    CHECK_THROWS_AS(generate_subject(s), Error);
    s = PhantomSpec{};
    s.dims = {4, 4, 4};
    try {
        generate_subject(s);
        FAIL("tiny phantom should be rejected");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::invalid_argument);
        CHECK(std::string(e.what()).find("too small") != std::string::npos);
    }
    CHECK_THROWS_AS(phantom_spec_from_json(nlohmann::json{{"preset", "elderly"}}), Error);
}

TEST_CASE("contrast pairs") {
    SECTION("zero enhancement is rejected") {
        CHECK_THROWS_AS(generate_contrast_pair(adult_preset()), Error);
    }
    SECTION("noise 0: post - pre is delta on the enhancing mask, 0 elsewhere") {
        const PhantomSpec spec = noiseless(contrast_preset());
        const auto s = generate_contrast_pair(spec);
        REQUIRE(s.post_image);
        std::size_t gm = 0, gm_enh = 0;
        for (std::size_t i = 0; i < s.image.data.size(); ++i) {
            const float diff = s.post_image->data[i] - s.image.data[i];
            const int l = s.truth.labels[i];
            const bool enh = s.enhancing_mask[i] != 0;
            if (l == label::csf_rim) CHECK(enh);
            if (l == label::gm_shell) ++gm, gm_enh += enh;
            if (l != label::csf_rim && l != label::gm_shell) CHECK(!enh);
            const float expect = enh ? static_cast<float>(spec.intensity_of(l) + spec.enhancement_delta) - static_cast<float>(spec.intensity_of(l)) : 0.0f;
            REQUIRE(diff == expect);
        }
        CHECK(gm_enh == static_cast<std::size_t>(std::llround(0.1 * double(gm))));
    }
    SECTION("truth and pre image match generate_subject") {
        const PhantomSpec spec = contrast_preset();
        const auto pair = generate_contrast_pair(spec);
        const auto single = generate_subject(spec);
        CHECK(pair.truth == single.truth);
        CHECK(same_volume(pair.image, single.image));
    }
}

TEST_CASE("cohorts") {
    slant_test::TempDir tmp("phantom");
    SECTION("n=10 gives pairwise distinct subjects and a manifest on disk") {
        const auto c = generate_cohort(adult_preset(), 10, CohortTag::original, tmp.path(), "s");
        REQUIRE(c.subjects.size() == 10);
        for (std::size_t i = 0; i < 10; ++i)
            for (std::size_t j = i + 1; j < 10; ++j) CHECK(!same_volume(c.subjects[i].image, c.subjects[j].image));
        const auto m = load_manifest(tmp / "manifest.json");
        REQUIRE(m.subjects.size() == 10);
        CHECK(m.subjects[3].subject_id == "s-003");
        CHECK(read_label_map(*m.subjects[3].label_path).labels == c.subjects[3].truth.labels);
        CHECK(same_volume(read_volume(m.subjects[3].image_path), c.subjects[3].image));
    }
    SECTION("subject i uses seed + i") {
        PhantomSpec spec = adult_preset();
        spec.seed = 100;
        const auto c = generate_cohort(spec, 3, CohortTag::original);
        spec.seed = 102;
        CHECK(same_volume(c.subjects[2].image, generate_subject(spec).image));
    }
    SECTION("n=1 gives a single-subject manifest") {
        CHECK(generate_cohort(adult_preset(), 1, CohortTag::new_cohort).manifest.subjects.size() == 1);
    }
    SECTION("contrast cohorts carry post images and pair paths") {
        const auto c = generate_cohort(contrast_preset(), 3, CohortTag::contrast_pair, tmp.path(), "p");
        for (const auto& s : c.subjects) CHECK(s.post_image.has_value());
        for (const auto& r : load_manifest(tmp / "manifest.json").subjects) CHECK(r.paired_image_path.has_value());
    }
    SECTION("output is independent of the worker count") {
        const auto one = generate_cohort(pediatric_preset(), 4, CohortTag::new_cohort, tmp / "t1", "x", 1);
        const auto four = generate_cohort(pediatric_preset(), 4, CohortTag::new_cohort, tmp / "t4", "x", 4);
        for (int i = 0; i < 4; ++i) {
            const std::string f = "x-00" + std::to_string(i) + "_image.nii";
            CHECK(slant_test::slurp(tmp / "t1" / f) == slant_test::slurp(tmp / "t4" / f));
        }
    }
}
