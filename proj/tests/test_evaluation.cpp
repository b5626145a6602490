#include "gcr/evaluation.hpp"
#include "testutil.hpp"

#include <doctest.h>

#include <cmath>

using namespace gcr;

namespace {

LabeledSample vec2(double a, double b, int cls, const std::string& id) {
    LabeledSample s;
    s.class_index = cls;
    s.sample_id = id;
    s.image.channels = 2;
    s.image.height = 1;
    s.image.width = 1;
    s.image.pixels = {static_cast<float>(a), static_cast<float>(b)};
    return s;
}

Model identity_model(const std::vector<std::string>& names, Mat table, Ablation ablation) {
    Model m;
    ExtractorConfig ec;
    ec.profile = ExtractorProfile::identity;
    ec.input_dim = static_cast<int>(table.cols());
    m.extractor = FeatureExtractor(ec);
    m.registration = RegistrationModule(ec.input_dim, RegistrationConfig{.identity = true});
    m.table = GlobalTable(names, std::move(table));
    m.ablation = ablation;
    return m;
}

// Two well-separated novel classes plus one base class; table rows sit on
// the true cluster centers, so an identity model predicts perfectly.
DatasetSplit two_cluster_split() {
    DatasetSplit split;
    split.classes = {{"b0", Partition::base}, {"nA", Partition::novel},
                     {"nB", Partition::novel}};
    split.n_few = 2;
    split.train = {vec2(50, 50, 0, "b0/t0"), vec2(50, 51, 0, "b0/t1"),
                   vec2(0, 0, 1, "nA/s0"),   vec2(0.2, 0, 1, "nA/s1"),
                   vec2(10, 10, 2, "nB/s0"), vec2(10, 10.2, 2, "nB/s1")};
    for (int i = 0; i < 8; ++i) {
        split.test.push_back(vec2(0.1 * i - 0.3, 0.1, 1, "nA/q" + std::to_string(i)));
        split.test.push_back(vec2(10 + 0.1 * i - 0.3, 9.9, 2, "nB/q" + std::to_string(i)));
    }
    return split;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("perfect separable fixture evaluates to mean 1.0 and std 0.0") {
    DatasetSplit split = two_cluster_split();
    Mat g(3, 2);
    g << 50, 50.5, 0.1, 0, 10, 10.1;
    Model model = identity_model({"b0", "nA", "nB"}, g, Ablation::B_R);

    StandardEvalConfig cfg;
    cfg.n_test = 2;
    cfg.n_q_test = 3;
    cfg.episodes = 20;
    cfg.rng_seed = 5;
    StandardEvalResult r = evaluate_standard(model, split, cfg, SynthesisConfig{});
    CHECK(r.mean_accuracy == doctest::Approx(1.0));
    CHECK(r.std_accuracy == doctest::Approx(0.0));
    REQUIRE(r.registration_accuracy.has_value());
    CHECK(*r.registration_accuracy == doctest::Approx(1.0));
}

TEST_CASE("accuracy summary matches the hand-computed mean and std") {
    StandardEvalResult r = accuracy_summary({1.0, 0.5, 0.75});
    CHECK(r.mean_accuracy == doctest::Approx(0.75).epsilon(1e-12));
    // Population std computed by hand: sqrt(((0.25)^2 + (0.25)^2 + 0) / 3).
    CHECK(r.std_accuracy == doctest::Approx(0.20412414523193154).epsilon(1e-12));
    CHECK(r.ci95 == doctest::Approx(1.96 * 0.20412414523193154 / std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("two-way fixture predictions match hand-computed nearest references") {
    // Identity everything; supports put rep A at (0,0), rep B at (4,4); the
    // table entries are displaced so soft selection lands between them.
    DatasetSplit split;
    split.classes = {{"A", Partition::novel}, {"B", Partition::novel}};
    split.n_few = 1;
    split.train = {vec2(0, 0, 0, "A/s"), vec2(4, 4, 1, "B/s")};
    split.test = {vec2(1, 1, 0, "A/q"), vec2(3.2, 3.2, 1, "B/q")};

    Mat g(2, 2);
    g << 0, 0, 4, 4;
    Model model = identity_model({"A", "B"}, g, Ablation::B_R);

    StandardEvalConfig cfg;
    cfg.n_test = 2;
    cfg.n_q_test = 1;
    Rng rng(3);
    TestEpisode ep = sample_test_episode(split, cfg, rng);
    std::vector<std::unique_ptr<Augmenter>> augs;
    const auto preds = predict_episode(model, ep, SynthesisConfig{}, augs, rng);

    // Queries at (1,1) and (3.2,3.2): nearest reference decides, and with
    // reps == table rows the references equal the blended table rows, still
    // closer to their own class.
    for (std::size_t q = 0; q < preds.size(); ++q) CHECK(preds[q] == ep.query_targets[q]);
}

TEST_CASE("unknown support class is a contract error") {
    DatasetSplit split = two_cluster_split();
    Mat g(3, 2);
    g << 50, 50, 0, 0, 10, 10;
    Model model = identity_model({"b0", "nA", "other"}, g, Ablation::B_R);

    StandardEvalConfig cfg;
    cfg.n_test = 2;
    cfg.n_q_test = 2;
    Rng rng(4);
    TestEpisode ep = sample_test_episode(split, cfg, rng);
    std::vector<std::unique_ptr<Augmenter>> augs;
    CHECK_THROWS_AS(predict_episode(model, ep, SynthesisConfig{}, augs, rng), ContractError);
}

TEST_CASE("insufficient test samples raise an integrity error") {
    DatasetSplit split = two_cluster_split();
    StandardEvalConfig cfg;
    cfg.n_test = 2;
    cfg.n_q_test = 50;
    Rng rng(6);
    CHECK_THROWS_AS(sample_test_episode(split, cfg, rng), IntegrityError);

    cfg.n_q_test = 2;
    cfg.n_test = 5;  // only two novel classes exist
    CHECK_THROWS_AS(sample_test_episode(split, cfg, rng), ConfigError);
}

TEST_CASE("standard evaluation is bit-reproducible from its seed") {
    DatasetSplit split = two_cluster_split();
    // Slightly off-center table so some episodes are imperfect.
    Mat g(3, 2);
    g << 50, 50, 4, 4, 7, 7;
    Model model = identity_model({"b0", "nA", "nB"}, g, Ablation::B_R);

    StandardEvalConfig cfg;
    cfg.n_test = 2;
    cfg.n_q_test = 4;
    cfg.episodes = 30;
    cfg.rng_seed = 77;
    StandardEvalResult a = evaluate_standard(model, split, cfg, SynthesisConfig{});
    StandardEvalResult b = evaluate_standard(model, split, cfg, SynthesisConfig{});
    CHECK(a.mean_accuracy == b.mean_accuracy);
    CHECK(a.std_accuracy == b.std_accuracy);
    REQUIRE(a.per_episode.size() == b.per_episode.size());
    for (std::size_t i = 0; i < a.per_episode.size(); ++i)
        CHECK(a.per_episode[i] == b.per_episode[i]);
}

TEST_CASE("generalized prediction picks the smallest embedded distance") {
    // Hand-set distances 1, 2, 3 from the sample to the three entries.
    Mat g(3, 1);
    g << 1.0, 2.0, 3.0;
    Model model = identity_model({"c1", "c2", "c3"}, g, Ablation::FULL);
    Image x;
    x.channels = 1;
    x.height = 1;
    x.width = 1;
    x.pixels = {0.0f};
    CHECK(predict_generalized(model, x) == 0);

    // A sample on an entry with the rest far away.
    Mat g2(3, 2);
    g2 << 0, 0, 9, 9, -9, 9;
    Model model2 = identity_model({"c1", "c2", "c3"}, g2, Ablation::FULL);
    Image y;
    y.channels = 2;
    y.height = 1;
    y.width = 1;
    y.pixels = {0.1f, -0.1f};
    CHECK(predict_generalized(model2, y) == 0);
}

TEST_CASE("generalized metrics on the hand-counted fixture") {
    // 4 base-origin samples (3 classified correctly) + 2 novel-origin
    // (1 correct): acc_b = 0.75, acc_n = 0.5, acc_a = 4/6.
    DatasetSplit split;
    split.classes = {{"base", Partition::base}, {"novel", Partition::novel}};
    split.n_few = 1;
    split.train = {vec2(0, 0, 0, "b/t"), vec2(10, 10, 1, "n/t")};
    split.test = {vec2(0.1, 0, 0, "b/q0"),  vec2(-0.1, 0, 0, "b/q1"),
                  vec2(0, 0.2, 0, "b/q2"),  vec2(9, 9, 0, "b/q3"),   // lands on novel
                  vec2(10, 10.1, 1, "n/q0"), vec2(1, 1, 1, "n/q1")};  // lands on base

    Mat g(2, 2);
    g << 0, 0, 10, 10;
    Model model = identity_model({"base", "novel"}, g, Ablation::FULL);

    GeneralizedMetrics m = evaluate_generalized(model, split);
    CHECK(m.acc_b == doctest::Approx(0.75));
    CHECK(m.acc_n == doctest::Approx(0.5));
    CHECK(m.acc_a == doctest::Approx(4.0 / 6.0));
    CHECK(m.per_class_total[0] == 4);
    CHECK(m.per_class_correct[0] == 3);
    CHECK(m.per_class_total[1] == 2);
    CHECK(m.per_class_correct[1] == 1);

    // Consistency identities on the counts.
    CHECK(m.acc_a ==
          doctest::Approx((m.per_class_correct[0] + m.per_class_correct[1]) /
                          static_cast<double>(m.per_class_total[0] + m.per_class_total[1])));
}

TEST_CASE("perfect generalized predictor scores 1.0 everywhere") {
    DatasetSplit split = two_cluster_split();
    Mat g(3, 2);
    g << 50, 50.5, 0, 0, 10, 10;
    Model model = identity_model({"b0", "nA", "nB"}, g, Ablation::FULL);
    // Add base-origin test samples near the base entry.
    split.test.push_back(vec2(50, 50, 0, "b0/q0"));
    split.test.push_back(vec2(50.1, 50.4, 0, "b0/q1"));

    GeneralizedMetrics m = evaluate_generalized(model, split);
    CHECK(m.acc_a == doctest::Approx(1.0));
    CHECK(m.acc_b == doctest::Approx(1.0));
    CHECK(m.acc_n == doctest::Approx(1.0));
}

TEST_CASE("generalized metrics agree exactly with a per-sample loop on random fixtures") {
    Rng rng(99);
    for (int fixture = 0; fixture < 100; ++fixture) {
        const int n_classes = 2 + rng.uniform_int(5);
        const int dim = 2 + rng.uniform_int(3);
        std::vector<std::string> names;
        Mat table(n_classes, dim);
        DatasetSplit split;
        for (int c = 0; c < n_classes; ++c) {
            names.push_back("c" + std::to_string(c));
            const Partition p = rng.uniform() < 0.4 ? Partition::novel : Partition::base;
            split.classes.push_back({names.back(), p});
            for (int d = 0; d < dim; ++d) table(c, d) = rng.normal(0.0, 2.0);
        }
        // Make sure at least one base and one novel class exist.
        split.classes[0].partition = Partition::base;
        split.classes[n_classes - 1].partition = Partition::novel;
        split.n_few = 1;

        const int n_test = 30 + rng.uniform_int(40);
        for (int i = 0; i < n_test; ++i) {
            LabeledSample s;
            s.class_index = rng.uniform_int(n_classes);
            s.sample_id = "q" + std::to_string(i);
            s.image.channels = dim;
            s.image.height = 1;
            s.image.width = 1;
            for (int d = 0; d < dim; ++d)
                s.image.pixels.push_back(static_cast<float>(rng.normal(0.0, 3.0)));
            split.test.push_back(std::move(s));
        }

        Model model = identity_model(names, table, Ablation::FULL);
        GeneralizedMetrics m = evaluate_generalized(model, split);

        // Independent per-sample loop: argmin distance (identity embeddings
        // make similarity argmax equal distance argmin).
        long cb = 0, cn = 0, tb = 0, tn = 0;
        for (const auto& s : split.test) {
            int best = 0;
            double best_d = 0.0;
            for (int c = 0; c < n_classes; ++c) {
                double d = 0.0;
                for (int k = 0; k < dim; ++k) {
                    const double diff = s.image.pixels[k] - table(c, k);
                    d += diff * diff;
                }
                if (c == 0 || d < best_d) {
                    best = c;
                    best_d = d;
                }
            }
            const bool correct = best == s.class_index;
            if (split.classes[s.class_index].partition == Partition::novel) {
                ++tn;
                cn += correct;
            } else {
                ++tb;
                cb += correct;
            }
        }
        CHECK(m.acc_a == doctest::Approx(static_cast<double>(cb + cn) / (tb + tn)).epsilon(1e-15));
        CHECK(m.acc_b == doctest::Approx(tb > 0 ? static_cast<double>(cb) / tb : 0.0).epsilon(1e-15));
        CHECK(m.acc_n == doctest::Approx(tn > 0 ? static_cast<double>(cn) / tn : 0.0).epsilon(1e-15));
    }
}

TEST_CASE("empty test partition is a contract error") {
    DatasetSplit split = two_cluster_split();
    split.test.clear();
    Mat g(3, 2);
    g.setZero();
    Model model = identity_model({"b0", "nA", "nB"}, g, Ablation::FULL);
    CHECK_THROWS_AS(evaluate_generalized(model, split), ContractError);
}

}  // TEST_SUITE
