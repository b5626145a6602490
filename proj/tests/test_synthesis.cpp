#include "gcr/autodiff.hpp"
#include "gcr/nn.hpp"
#include "gcr/synthesis.hpp"
#include "testutil.hpp"

#include <doctest.h>

#include <set>

using namespace gcr;

namespace {

LabeledSample vec_sample(std::initializer_list<float> values, int cls, const std::string& id) {
    LabeledSample s;
    s.class_index = cls;
    s.sample_id = id;
    s.image.channels = static_cast<int>(values.size());
    s.image.height = 1;
    s.image.width = 1;
    s.image.pixels = values;
    return s;
}

LabeledSample grid_sample(int size, int cls, const std::string& id) {
    LabeledSample s;
    s.class_index = cls;
    s.sample_id = id;
    s.image.channels = 1;
    s.image.height = size;
    s.image.width = size;
    s.image.pixels.assign(static_cast<std::size_t>(size) * size, 0.5f);
    return s;
}

}  // namespace

TEST_SUITE("synthesis") {

TEST_CASE("step 1 returns exactly k_t items with the originals leading") {
    Rng rng(5);
    std::vector<LabeledSample> originals{grid_sample(8, 0, "s0")};
    std::vector<std::unique_ptr<Augmenter>> augs;
    augs.push_back(make_random_crop());
    augs.push_back(make_random_flip());

    auto out = augment_step1(originals, 10, augs, rng);
    CHECK(out.size() == 10);
    CHECK(out[0].sample_id == "s0");
    CHECK(out[0].image.pixels == originals[0].image.pixels);
    for (const auto& s : out) CHECK(s.class_index == 0);
}

TEST_CASE("step 1 with k_t equal to the sample count returns originals unchanged") {
    Rng rng(5);
    std::vector<LabeledSample> originals{vec_sample({1, 2}, 1, "a"), vec_sample({3, 4}, 1, "b")};
    std::vector<std::unique_ptr<Augmenter>> augs;
    augs.push_back(make_feature_jitter(Vec::Ones(2), 0.5));

    auto out = augment_step1(originals, 2, augs, rng);
    REQUIRE(out.size() == 2);
    CHECK(out[0].image.pixels == originals[0].image.pixels);
    CHECK(out[1].image.pixels == originals[1].image.pixels);
}

TEST_CASE("step 1 refuses to discard originals") {
    Rng rng(1);
    std::vector<LabeledSample> originals{vec_sample({1}, 0, "a"), vec_sample({2}, 0, "b"),
                                         vec_sample({3}, 0, "c")};
    std::vector<std::unique_ptr<Augmenter>> augs;
    CHECK_THROWS_AS(augment_step1(originals, 2, augs, rng), ContractError);
}

TEST_CASE("step 1 output is byte-identical across runs with the same rng state") {
    std::vector<LabeledSample> originals;
    for (int i = 0; i < 5; ++i) originals.push_back(grid_sample(6, 2, "s" + std::to_string(i)));
    std::vector<std::unique_ptr<Augmenter>> augs;
    augs.push_back(make_random_crop());
    augs.push_back(make_random_flip());

    Rng r1(123), r2(123);
    auto a = augment_step1(originals, 20, augs, r1);
    auto b = augment_step1(originals, 20, augs, r2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].sample_id == b[i].sample_id);
        CHECK(a[i].image.pixels == b[i].image.pixels);
    }
}

TEST_CASE("draw with k_t=1 is the forced singleton") {
    Rng rng(9);
    for (int rep = 0; rep < 20; ++rep) {
        ConvexDraw d = draw_convex(1, rng);
        CHECK(d.k_r == 1);
        CHECK(d.selected_indices == std::vector<int>{0});
        CHECK(d.weights == std::vector<double>{1.0});
    }
}

TEST_CASE("weights normalise as expected: raw (1,3) becomes (0.25, 0.75)") {
    ConvexDraw d;
    d.k_r = 2;
    d.selected_indices = {0, 1};
    d.weights = {1.0 / 4.0, 3.0 / 4.0};  // normalised by hand
    Mat f(2, 2);
    f << 1, 0, 0, 1;
    Vec r = synthesize(f, d);
    CHECK(r(0) == doctest::Approx(0.25));
    CHECK(r(1) == doctest::Approx(0.75));
}

TEST_CASE("draw properties hold over many draws and k_r is uniform") {
    Rng rng(2024);
    const int k_t = 10;
    const int trials = 10000;
    std::vector<int> k_r_counts(k_t + 1, 0);
    for (int i = 0; i < trials; ++i) {
        ConvexDraw d = draw_convex(k_t, rng);
        REQUIRE(d.k_r >= 1);
        REQUIRE(d.k_r <= k_t);
        ++k_r_counts[d.k_r];

        double sum = 0.0;
        for (double w : d.weights) {
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);

        std::set<int> distinct(d.selected_indices.begin(), d.selected_indices.end());
        CHECK(distinct.size() == d.selected_indices.size());
        for (int idx : d.selected_indices) {
            CHECK(idx >= 0);
            CHECK(idx < k_t);
        }
    }
    // Chi-square uniformity over {1..10}, 9 dof, 1% critical value 21.666.
    const double expected = static_cast<double>(trials) / k_t;
    double chi2 = 0.0;
    for (int k = 1; k <= k_t; ++k) {
        const double diff = k_r_counts[k] - expected;
        chi2 += diff * diff / expected;
    }
    CHECK(chi2 < 21.666);
}

TEST_CASE("synthesized samples stay inside the convex hull of the selected features") {
    Rng rng(31);
    const int k_t = 8, d = 5;
    for (int trial = 0; trial < 1000; ++trial) {
        Mat f(k_t, d);
        for (int i = 0; i < k_t; ++i)
            for (int j = 0; j < d; ++j) f(i, j) = rng.normal(0.0, 3.0);
        ConvexDraw draw = draw_convex(k_t, rng);
        Vec r = synthesize(f, draw);
        for (int j = 0; j < d; ++j) {
            double lo = f(draw.selected_indices[0], j), hi = lo;
            for (int idx : draw.selected_indices) {
                lo = std::min(lo, f(idx, j));
                hi = std::max(hi, f(idx, j));
            }
            CHECK(r(j) >= lo - 1e-12);
            CHECK(r(j) <= hi + 1e-12);
        }
    }
}

TEST_CASE("identical features synthesize to that same point for any draw") {
    Rng rng(8);
    Mat f(6, 3);
    for (int i = 0; i < 6; ++i) f.row(i) << 1.5, -2.0, 0.25;
    for (int rep = 0; rep < 50; ++rep) {
        ConvexDraw d = draw_convex(6, rng);
        Vec r = synthesize(f, d);
        CHECK(r(0) == doctest::Approx(1.5).epsilon(1e-12));
        CHECK(r(1) == doctest::Approx(-2.0).epsilon(1e-12));
        CHECK(r(2) == doctest::Approx(0.25).epsilon(1e-12));
    }
}

TEST_CASE("k_r=1 draw returns the selected feature exactly") {
    Mat f(3, 2);
    f << 1, 2, 3, 4, 5, 6;
    ConvexDraw d;
    d.k_r = 1;
    d.selected_indices = {2};
    d.weights = {1.0};
    Vec r = synthesize(f, d);
    CHECK(r(0) == 5.0);
    CHECK(r(1) == 6.0);
}

TEST_CASE("gradient through synthesis equals the draw weights, zero elsewhere") {
    // The tape path used during training must put weight w_i on selected rows
    // and exactly zero on unselected ones.
    Parameter F("F", 4, 3);
    F.value << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    std::vector<RowGroup> groups{{{3, 1}, {0.3, 0.7}}};
    Tape t;
    Node* rep = group_weighted_rows(t, t.leaf(F), groups);
    t.backward(sum_all(t, rep));
    for (int j = 0; j < 3; ++j) {
        CHECK(F.grad(3, j) == 0.3);
        CHECK(F.grad(1, j) == 0.7);
        CHECK(F.grad(0, j) == 0.0);
        CHECK(F.grad(2, j) == 0.0);
    }
}

TEST_CASE("feature jitter scales noise by the provided per-dimension std") {
    Vec stds(2);
    stds << 1.0, 0.0;  // second dimension must never change
    auto aug = make_feature_jitter(stds, 0.5);
    Rng rng(3);
    LabeledSample s = vec_sample({1.0f, 2.0f}, 0, "x");
    bool first_changed = false;
    for (int i = 0; i < 10; ++i) {
        Image out = aug->apply(s.image, rng);
        first_changed = first_changed || out.pixels[0] != s.image.pixels[0];
        CHECK(out.pixels[1] == s.image.pixels[1]);
    }
    CHECK(first_changed);
}

TEST_CASE("augmenter construction rejects spatial augmenters on vector data") {
    SyntheticSpec spec;
    spec.rng_seed = 6;
    DatasetSplit split = make_synthetic_gaussian(spec);
    SynthesisConfig config;
    config.augmenters = {"random_crop"};
    CHECK_THROWS_AS(build_augmenters(config, split), ConfigError);

    config.augmenters = {"feature_jitter"};
    auto augs = build_augmenters(config, split);
    CHECK(augs.size() == 1);
    CHECK(augs[0]->name() == "feature_jitter");

    config.augmenters = {"nonsense"};
    CHECK_THROWS_AS(build_augmenters(config, split), ConfigError);
}

}  // TEST_SUITE
