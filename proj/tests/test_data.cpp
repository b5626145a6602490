#include "gcr/data.hpp"
#include "testutil.hpp"

#include <doctest.h>

#include <fstream>
#include <set>

using namespace gcr;

namespace {

// Tiny PGM writer so ingestion tests exercise the real directory-scan and
// decode path without binary fixtures in the repo.
void write_pgm(const std::string& path, int size, unsigned char fill, unsigned char mark) {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n" << size << " " << size << "\n255\n";
    std::vector<unsigned char> px(static_cast<std::size_t>(size) * size, fill);
    px[1] = mark;  // asymmetric pixel so rotations are distinguishable
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

struct ToyImageDataset {
    testutil::TempDir dir{"data"};

    // classes x samples, 28x28 so no resize happens.
    ToyImageDataset(const std::vector<std::tuple<std::string, std::string, std::string>>& manifest,
                    int samples_per_class) {
        std::ofstream mf(dir.path() / "split.txt");
        for (const auto& [name, part, split] : manifest) {
            mf << name << "\t" << part << "\t" << split << "\n";
            std::filesystem::create_directories(dir.path() / name);
            for (int i = 0; i < samples_per_class; ++i)
                write_pgm((dir.path() / name / ("img" + std::to_string(i) + ".pgm")).string(), 28,
                          static_cast<unsigned char>(10 * i + 5), 250);
        }
    }
};

std::set<std::string> ids_of(const std::vector<LabeledSample>& samples) {
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.sample_id);
    return ids;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("omniglot profile expands every class into four rotation classes") {
    ToyImageDataset toy({{"alpha", "base", "train"}, {"beta", "novel", "test"}}, 8);
    LoadOptions opt;
    opt.n_few = 2;
    DatasetSplit split = load_image_dataset(toy.dir.path().string(), ImageProfile::omniglot, opt);

    CHECK(split.num_classes() == 8);
    CHECK(split.classes_of(Partition::base).size() == 4);
    CHECK(split.classes_of(Partition::novel).size() == 4);

    // Base classes contribute all samples to train; novel classes exactly n_few.
    auto train_by_class = split.train_by_class();
    auto test_by_class = split.test_by_class();
    for (int c = 0; c < split.num_classes(); ++c) {
        if (split.classes[c].partition == Partition::base) {
            CHECK(train_by_class[c].size() == 8);
            CHECK(test_by_class[c].empty());
        } else {
            CHECK(train_by_class[c].size() == 2);
            CHECK(test_by_class[c].size() == 6);
        }
    }
}

TEST_CASE("single class single image becomes four rotation classes of one image") {
    ToyImageDataset toy({{"solo", "base", "train"}}, 1);
    DatasetSplit split = load_image_dataset(toy.dir.path().string(), ImageProfile::omniglot);
    CHECK(split.num_classes() == 4);
    CHECK(split.train.size() == 4);
    CHECK(split.test.empty());
}

TEST_CASE("rotating four times returns the original image") {
    Image img;
    img.channels = 1;
    img.height = 3;
    img.width = 5;
    img.pixels.resize(15);
    for (int i = 0; i < 15; ++i) img.pixels[i] = static_cast<float>(i) * 0.1f;
    Image r = rotate90(rotate90(rotate90(rotate90(img))));
    CHECK(r.height == img.height);
    CHECK(r.width == img.width);
    CHECK(r.pixels == img.pixels);

    // One rotation of a non-square image swaps dimensions.
    Image once = rotate90(img);
    CHECK(once.height == 5);
    CHECK(once.width == 3);
}

TEST_CASE("loader is deterministic and train/test ids are disjoint") {
    ToyImageDataset toy({{"a", "base", "train"}, {"b", "novel", "test"}, {"c", "novel", "test"}},
                        6);
    LoadOptions opt;
    opt.n_few = 2;
    DatasetSplit s1 = load_image_dataset(toy.dir.path().string(), ImageProfile::omniglot, opt);
    DatasetSplit s2 = load_image_dataset(toy.dir.path().string(), ImageProfile::omniglot, opt);

    CHECK(ids_of(s1.train) == ids_of(s2.train));
    CHECK(ids_of(s1.test) == ids_of(s2.test));

    auto train_ids = ids_of(s1.train);
    for (const auto& id : ids_of(s1.test)) CHECK(train_ids.count(id) == 0);
}

TEST_CASE("missing manifest raises a configuration error") {
    testutil::TempDir dir("nomanifest");
    CHECK_THROWS_AS(load_image_dataset(dir.path().string(), ImageProfile::omniglot), ConfigError);
}

TEST_CASE("unreadable image raises an ingestion error naming the file") {
    ToyImageDataset toy({{"ok", "base", "train"}}, 2);
    std::ofstream bad(toy.dir.path() / "ok" / "broken.pgm");
    bad << "not an image";
    bad.close();
    try {
        load_image_dataset(toy.dir.path().string(), ImageProfile::omniglot);
        FAIL("expected IngestionError");
    } catch (const IngestionError& e) {
        CHECK(std::string(e.what()).find("broken.pgm") != std::string::npos);
    }
}

TEST_CASE("novel class without enough samples raises an integrity error") {
    ToyImageDataset toy({{"tiny", "novel", "test"}}, 2);
    LoadOptions opt;
    opt.n_few = 5;
    CHECK_THROWS_AS(load_image_dataset(toy.dir.path().string(), ImageProfile::omniglot, opt),
                    IntegrityError);
}

TEST_CASE("val classes are skipped by default and foldable as novel") {
    ToyImageDataset toy({{"a", "base", "train"}, {"v", "val", "train"}}, 6);
    LoadOptions opt;
    opt.n_few = 2;
    DatasetSplit skipped = load_image_dataset(toy.dir.path().string(), ImageProfile::omniglot, opt);
    CHECK(skipped.num_classes() == 4);

    opt.val_as_novel = true;
    DatasetSplit folded = load_image_dataset(toy.dir.path().string(), ImageProfile::omniglot, opt);
    CHECK(folded.num_classes() == 8);
    CHECK(folded.classes_of(Partition::novel).size() == 4);
}

TEST_CASE("generalized split on a 3-class toy set has exact per-class counts") {
    SyntheticSpec spec;
    spec.n_base = 2;
    spec.n_novel = 1;
    spec.dim = 3;
    spec.samples_per_base = 5;
    spec.n_few = 2;
    spec.test_per_class = 3;
    spec.rng_seed = 42;
    DatasetSplit source = make_synthetic_gaussian(spec);

    DatasetSplit g = make_generalized_split(source, /*n_few=*/1, /*per_base_train=*/2,
                                            /*per_class_test=*/1, /*seed=*/7);

    // Enumerate the produced split and count per class.
    auto train_by_class = g.train_by_class();
    auto test_by_class = g.test_by_class();
    for (int c = 0; c < g.num_classes(); ++c) {
        const bool is_base = g.classes[c].partition == Partition::base;
        CHECK(train_by_class[c].size() == (is_base ? 2u : 1u));
        CHECK(test_by_class[c].size() == 1u);
    }
    CHECK(g.train.size() == 2 * 2 + 1);
    CHECK(g.test.size() == 3);

    // Train and test ids never overlap.
    auto train_ids = ids_of(g.train);
    for (const auto& id : ids_of(g.test)) CHECK(train_ids.count(id) == 0);
}

TEST_CASE("generalized split is bit-reproducible from its seed") {
    SyntheticSpec spec;
    spec.samples_per_base = 20;
    spec.test_per_class = 5;
    spec.rng_seed = 1;
    DatasetSplit source = make_synthetic_gaussian(spec);

    DatasetSplit a = make_generalized_split(source, 3, 10, 4, 99);
    DatasetSplit b = make_generalized_split(source, 3, 10, 4, 99);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i)
        CHECK(a.train[i].sample_id == b.train[i].sample_id);
    REQUIRE(a.test.size() == b.test.size());
    for (std::size_t i = 0; i < a.test.size(); ++i)
        CHECK(a.test[i].sample_id == b.test[i].sample_id);

    DatasetSplit c = make_generalized_split(source, 3, 10, 4, 100);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.train.size(); ++i)
        any_diff = any_diff || a.train[i].sample_id != c.train[i].sample_id;
    CHECK(any_diff);
}

TEST_CASE("generalized split with zero test request yields empty test") {
    SyntheticSpec spec;
    spec.rng_seed = 3;
    spec.samples_per_base = 10;
    DatasetSplit source = make_synthetic_gaussian(spec);
    DatasetSplit g = make_generalized_split(source, 2, 4, 0, 5);
    CHECK(g.test.empty());
    CHECK(!g.train.empty());
}

TEST_CASE("generalized split names the class that lacks samples") {
    SyntheticSpec spec;
    spec.n_base = 1;
    spec.n_novel = 0;
    spec.samples_per_base = 3;
    spec.test_per_class = 0;
    DatasetSplit source = make_synthetic_gaussian(spec);
    try {
        make_generalized_split(source, 1, 10, 5, 1);
        FAIL("expected IntegrityError");
    } catch (const IntegrityError& e) {
        CHECK(std::string(e.what()).find("base0") != std::string::npos);
    }
}

TEST_CASE("synthetic gaussian dataset has the requested shape") {
    SyntheticSpec spec;  // 7 base, 3 novel, dim 16, 200/class, n_few 5, 50 test
    spec.rng_seed = 11;
    DatasetSplit split = make_synthetic_gaussian(spec);

    CHECK(split.num_classes() == 10);
    CHECK(split.train.size() == 7 * 200 + 3 * 5);
    CHECK(split.test.size() == 10 * 50);
    CHECK(split.class_means.rows() == 10);
    CHECK(split.class_means.cols() == 16);
    for (const auto& s : split.train) {
        CHECK(s.image.height == 1);
        CHECK(s.image.width == 1);
        CHECK(s.image.channels == 16);
    }

    const double bayes = nearest_true_mean_accuracy(split);
    CHECK(bayes > 0.5);  // separation 6 is comfortably above chance 0.1
}

TEST_CASE("well-separated synthetic classes approach oracle accuracy one") {
    SyntheticSpec spec;
    spec.class_separation = 200.0;
    spec.rng_seed = 2;
    DatasetSplit split = make_synthetic_gaussian(spec);
    CHECK(nearest_true_mean_accuracy(split) == doctest::Approx(1.0));
}

TEST_CASE("synthetic dataset with no novel classes is a plain classification set") {
    SyntheticSpec spec;
    spec.n_novel = 0;
    spec.rng_seed = 4;
    DatasetSplit split = make_synthetic_gaussian(spec);
    CHECK(split.num_classes() == 7);
    CHECK(split.classes_of(Partition::novel).empty());
}

TEST_CASE("synthetic container round-trips through hdf5 + sidecar") {
    SyntheticSpec spec;
    spec.n_base = 3;
    spec.n_novel = 2;
    spec.dim = 4;
    spec.samples_per_base = 6;
    spec.n_few = 2;
    spec.test_per_class = 3;
    spec.rng_seed = 77;
    DatasetSplit split = make_synthetic_gaussian(spec);

    testutil::TempDir dir("container");
    const std::string path = (dir.path() / "toy.h5").string();
    save_synthetic_dataset(split, path);
    DatasetSplit loaded = load_synthetic_dataset(path);

    REQUIRE(loaded.num_classes() == split.num_classes());
    CHECK(loaded.n_few == split.n_few);
    for (int c = 0; c < split.num_classes(); ++c) {
        CHECK(loaded.classes[c].name == split.classes[c].name);
        CHECK(loaded.classes[c].partition == split.classes[c].partition);
    }
    CHECK((loaded.class_means - split.class_means).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(loaded.train.size() == split.train.size());
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        CHECK(loaded.train[i].sample_id == split.train[i].sample_id);
        CHECK(loaded.train[i].class_index == split.train[i].class_index);
        CHECK(loaded.train[i].image.pixels == split.train[i].image.pixels);
    }
    CHECK(loaded.test.size() == split.test.size());
}

}  // TEST_SUITE
