#include "gcr/data.hpp"

#include "gcr/io.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace gcr {

int DatasetSplit::find_class(const std::string& name) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i].name == name) return static_cast<int>(i);
    return -1;
}

std::vector<int> DatasetSplit::classes_of(Partition p) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (classes[i].partition == p) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<std::vector<int>> DatasetSplit::train_by_class() const {
    std::vector<std::vector<int>> by_class(classes.size());
    for (std::size_t i = 0; i < train.size(); ++i)
        by_class[train[i].class_index].push_back(static_cast<int>(i));
    return by_class;
}

std::vector<std::vector<int>> DatasetSplit::test_by_class() const {
    std::vector<std::vector<int>> by_class(classes.size());
    for (std::size_t i = 0; i < test.size(); ++i)
        by_class[test[i].class_index].push_back(static_cast<int>(i));
    return by_class;
}

Image rotate90(const Image& img) {
    Image out;
    out.channels = img.channels;
    out.height = img.width;
    out.width = img.height;
    out.pixels.resize(img.pixels.size());
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                out.at(c, img.width - 1 - x, y) = img.at(c, y, x);
    return out;
}

Vec image_to_vec(const Image& img) {
    Vec v(img.numel());
    for (int i = 0; i < img.numel(); ++i) v(i) = static_cast<double>(img.pixels[i]);
    return v;
}

namespace {

struct ManifestEntry {
    std::string class_name;
    Partition partition;
    bool in_train;
};

std::vector<ManifestEntry> read_manifest(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    require<ConfigError>(static_cast<bool>(in),
                         "missing split manifest: " + manifest_path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::string name, part, split;
        std::istringstream ls(line);
        if (!std::getline(ls, name, '\t') || !std::getline(ls, part, '\t') ||
            !std::getline(ls, split, '\t')) {
            // Whitespace-separated fallback keeps hand-written manifests usable.
            std::istringstream ws(line);
            if (!(ws >> name >> part >> split))
                throw ConfigError("malformed manifest line " + std::to_string(line_no) + ": " +
                                  line);
        }
        ManifestEntry e;
        e.class_name = name;
        if (part == "base") e.partition = Partition::base;
        else if (part == "novel") e.partition = Partition::novel;
        else if (part == "val") e.partition = Partition::val;
        else throw ConfigError("manifest line " + std::to_string(line_no) +
                               ": unknown partition '" + part + "'");
        if (split == "train") e.in_train = true;
        else if (split == "test") e.in_train = false;
        else throw ConfigError("manifest line " + std::to_string(line_no) + ": unknown split '" +
                               split + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

Image decode_image(const fs::path& file, int target_size, int channels) {
    cv::Mat raw = cv::imread(file.string(),
                             channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
    require<IngestionError>(!raw.empty(), "unreadable image: " + file.string());
    cv::Mat resized;
    if (raw.rows != target_size || raw.cols != target_size)
        cv::resize(raw, resized, cv::Size(target_size, target_size), 0, 0, cv::INTER_AREA);
    else
        resized = raw;

    Image img;
    img.channels = channels;
    img.height = target_size;
    img.width = target_size;
    img.pixels.resize(img.numel());
    for (int y = 0; y < target_size; ++y) {
        for (int x = 0; x < target_size; ++x) {
            if (channels == 1) {
                img.at(0, y, x) = static_cast<float>(resized.at<uchar>(y, x)) / 255.0f;
            } else {
                const auto& px = resized.at<cv::Vec3b>(y, x);  // BGR
                img.at(0, y, x) = static_cast<float>(px[2]) / 255.0f;
                img.at(1, y, x) = static_cast<float>(px[1]) / 255.0f;
                img.at(2, y, x) = static_cast<float>(px[0]) / 255.0f;
            }
        }
    }
    return img;
}

}  // namespace

DatasetSplit load_image_dataset(const std::string& root_path, ImageProfile profile,
                                const LoadOptions& options) {
    const fs::path root(root_path);
    require<ConfigError>(fs::is_directory(root), "dataset root not found: " + root_path);
    const auto entries = read_manifest(root / "split.txt");

    const int target = profile == ImageProfile::omniglot ? 28 : 84;
    const int channels = profile == ImageProfile::omniglot ? 1 : 3;
    const bool expand_rotations = profile == ImageProfile::omniglot;

    DatasetSplit split;
    split.n_few = options.n_few;

    for (const auto& entry : entries) {
        Partition partition = entry.partition;
        if (partition == Partition::val) {
            if (!options.val_as_novel) continue;
            partition = Partition::novel;
        }

        const fs::path class_dir = root / entry.class_name;
        require<IngestionError>(fs::is_directory(class_dir),
                                "class directory missing: " + class_dir.string());
        std::vector<fs::path> files;
        for (const auto& de : fs::directory_iterator(class_dir))
            if (de.is_regular_file()) files.push_back(de.path());
        std::sort(files.begin(), files.end());
        require<IntegrityError>(!files.empty(), "class has no samples: " + entry.class_name);

        std::vector<Image> images;
        images.reserve(files.size());
        for (const auto& f : files) images.push_back(decode_image(f, target, channels));

        const int rotations = expand_rotations ? 4 : 1;
        for (int r = 0; r < rotations; ++r) {
            std::string class_name = entry.class_name;
            if (expand_rotations) class_name += "/rot" + std::to_string(r * 90);
            split.classes.push_back({class_name, partition});
            const int class_index = static_cast<int>(split.classes.size()) - 1;

            const bool is_novel = partition == Partition::novel;
            if (is_novel)
                require<IntegrityError>(static_cast<int>(files.size()) > options.n_few,
                                        "class " + entry.class_name + " has " +
                                            std::to_string(files.size()) +
                                            " samples, need more than n_few=" +
                                            std::to_string(options.n_few));

            for (std::size_t i = 0; i < images.size(); ++i) {
                Image img = images[i];
                for (int k = 0; k < r; ++k) img = rotate90(img);
                LabeledSample sample;
                sample.image = std::move(img);
                sample.class_index = class_index;
                sample.sample_id = class_name + "/" + files[i].filename().string();
                const bool to_train =
                    is_novel ? static_cast<int>(i) < options.n_few : entry.in_train;
                (to_train ? split.train : split.test).push_back(std::move(sample));
            }
        }
    }
    require<IntegrityError>(!split.classes.empty(), "manifest selected no classes");
    return split;
}

DatasetSplit make_generalized_split(const DatasetSplit& source, int n_few, int per_base_train,
                                    int per_class_test, std::uint64_t rng_seed) {
    require<ConfigError>(n_few >= 0 && per_base_train >= 0 && per_class_test >= 0,
                         "generalized split: negative counts");
    DatasetSplit out;
    out.classes = source.classes;
    out.n_few = n_few;
    out.class_means = source.class_means;

    const auto train_by_class = source.train_by_class();
    const auto test_by_class = source.test_by_class();
    const Rng root(rng_seed);

    for (int c = 0; c < source.num_classes(); ++c) {
        const auto& info = source.classes[c];
        // Pool train + test samples of the class, then redistribute.
        std::vector<const LabeledSample*> pool;
        for (int i : train_by_class[c]) pool.push_back(&source.train[i]);
        for (int i : test_by_class[c]) pool.push_back(&source.test[i]);

        const int want_train = info.partition == Partition::base ? per_base_train : n_few;
        const int want = want_train + per_class_test;
        require<IntegrityError>(static_cast<int>(pool.size()) >= want,
                                "class " + info.name + " has " + std::to_string(pool.size()) +
                                    " samples, generalized split needs " + std::to_string(want));

        Rng rng = root.derive(static_cast<std::uint64_t>(c));
        const auto chosen = rng.sample_indices(static_cast<int>(pool.size()), want);
        for (int k = 0; k < want; ++k) {
            LabeledSample s = *pool[chosen[k]];
            s.class_index = c;
            (k < want_train ? out.train : out.test).push_back(std::move(s));
        }
    }
    return out;
}

DatasetSplit make_synthetic_gaussian(const SyntheticSpec& spec) {
    require<ConfigError>(spec.n_base > 0, "synthetic: need at least one base class");
    require<ConfigError>(spec.n_novel >= 0, "synthetic: negative novel count");
    require<ConfigError>(spec.dim > 0 && spec.samples_per_base > 0 && spec.n_few > 0 &&
                             spec.test_per_class >= 0,
                         "synthetic: counts must be positive");
    require<ConfigError>(spec.class_separation > 0.0, "synthetic: separation must be positive");

    Rng rng(spec.rng_seed);
    DatasetSplit split;
    split.n_few = spec.n_few;
    const int total = spec.n_base + spec.n_novel;
    split.class_means = Mat(total, spec.dim);

    auto add_class = [&](const std::string& name, Partition p, int n_train) {
        split.classes.push_back({name, p});
        const int c = static_cast<int>(split.classes.size()) - 1;
        for (int d = 0; d < spec.dim; ++d)
            split.class_means(c, d) = rng.uniform(0.0, spec.class_separation);

        auto draw_sample = [&](const std::string& tag, int idx) {
            LabeledSample s;
            s.class_index = c;
            s.sample_id = name + "/" + tag + std::to_string(idx);
            s.image.channels = spec.dim;
            s.image.height = 1;
            s.image.width = 1;
            s.image.pixels.resize(spec.dim);
            for (int d = 0; d < spec.dim; ++d)
                s.image.pixels[d] = static_cast<float>(split.class_means(c, d) + rng.normal());
            return s;
        };
        for (int i = 0; i < n_train; ++i) split.train.push_back(draw_sample("tr", i));
        for (int i = 0; i < spec.test_per_class; ++i) split.test.push_back(draw_sample("te", i));
    };

    for (int b = 0; b < spec.n_base; ++b)
        add_class("base" + std::to_string(b), Partition::base, spec.samples_per_base);
    for (int v = 0; v < spec.n_novel; ++v)
        add_class("novel" + std::to_string(v), Partition::novel, spec.n_few);
    return split;
}

namespace {

Mat samples_to_mat(const std::vector<LabeledSample>& samples, int dim) {
    Mat m(static_cast<Eigen::Index>(samples.size()), dim);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        require<ContractError>(samples[i].image.numel() == dim,
                               "dataset container: inconsistent sample dims");
        for (int d = 0; d < dim; ++d)
            m(static_cast<Eigen::Index>(i), d) = samples[i].image.pixels[d];
    }
    return m;
}

}  // namespace

void save_synthetic_dataset(const DatasetSplit& split, const std::string& path) {
    require<ContractError>(split.class_means.rows() == split.num_classes(),
                           "save_synthetic_dataset: split has no stored class means");
    const int dim = static_cast<int>(split.class_means.cols());

    ArrayFile file = ArrayFile::create(path);
    file.write("train/images", samples_to_mat(split.train, dim));
    file.write("test/images", samples_to_mat(split.test, dim));
    std::vector<int> train_labels, test_labels;
    for (const auto& s : split.train) train_labels.push_back(s.class_index);
    for (const auto& s : split.test) test_labels.push_back(s.class_index);
    file.write("train/labels", train_labels);
    file.write("test/labels", test_labels);
    file.write("class_means", split.class_means);

    json meta;
    meta["kind"] = "synthetic_gaussian";
    meta["dim"] = dim;
    meta["n_few"] = split.n_few;
    for (const auto& c : split.classes) {
        meta["classes"].push_back(
            {{"name", c.name},
             {"partition", c.partition == Partition::base ? "base" : "novel"}});
    }
    for (const auto& s : split.train) meta["train_ids"].push_back(s.sample_id);
    for (const auto& s : split.test) meta["test_ids"].push_back(s.sample_id);
    std::ofstream sidecar(path + ".json");
    require<IngestionError>(static_cast<bool>(sidecar), "cannot write sidecar " + path + ".json");
    sidecar << meta.dump(2) << "\n";
}

DatasetSplit load_synthetic_dataset(const std::string& path) {
    std::ifstream sidecar_in(path + ".json");
    require<ConfigError>(static_cast<bool>(sidecar_in), "missing sidecar " + path + ".json");
    json meta = json::parse(sidecar_in);

    DatasetSplit split;
    split.n_few = meta.at("n_few").get<int>();
    for (const auto& c : meta.at("classes")) {
        split.classes.push_back({c.at("name").get<std::string>(),
                                 c.at("partition").get<std::string>() == "base"
                                     ? Partition::base
                                     : Partition::novel});
    }

    ArrayFile file = ArrayFile::open_readonly(path);
    split.class_means = file.read_mat("class_means");
    const int dim = static_cast<int>(split.class_means.cols());

    auto load_samples = [&](const std::string& group, const json& ids) {
        const Mat images = file.read_mat(group + "/images");
        const auto labels = file.read_ints(group + "/labels");
        require<IngestionError>(images.rows() == static_cast<Eigen::Index>(labels.size()),
                                "dataset container: image/label count mismatch");
        std::vector<LabeledSample> out(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            out[i].class_index = labels[i];
            out[i].sample_id = ids[i].get<std::string>();
            out[i].image.channels = dim;
            out[i].image.height = 1;
            out[i].image.width = 1;
            out[i].image.pixels.resize(dim);
            for (int d = 0; d < dim; ++d)
                out[i].image.pixels[d] =
                    static_cast<float>(images(static_cast<Eigen::Index>(i), d));
        }
        return out;
    };
    split.train = load_samples("train", meta.at("train_ids"));
    split.test = load_samples("test", meta.at("test_ids"));
    return split;
}

DatasetSplit merge_splits(const DatasetSplit& a, const DatasetSplit& b) {
    DatasetSplit out = a;
    out.class_means = Mat();  // true means are only meaningful per source
    for (const auto& c : b.classes)
        require<ContractError>(out.find_class(c.name) < 0,
                               "merge_splits: class id collision on " + c.name);
    const int offset = a.num_classes();
    for (const auto& c : b.classes) out.classes.push_back(c);
    for (LabeledSample s : b.train) {
        s.class_index += offset;
        out.train.push_back(std::move(s));
    }
    for (LabeledSample s : b.test) {
        s.class_index += offset;
        out.test.push_back(std::move(s));
    }
    return out;
}

int nearest_true_mean(const Mat& class_means, const std::vector<int>& candidates,
                      const Image& x) {
    const Vec v = image_to_vec(x);
    require<ContractError>(v.size() == class_means.cols(), "nearest_true_mean: dim mismatch");
    int best = -1;
    double best_d = 0.0;
    auto consider = [&](int c) {
        const double d = (class_means.row(c).transpose() - v).squaredNorm();
        if (best < 0 || d < best_d) {
            best = c;
            best_d = d;
        }
    };
    if (candidates.empty())
        for (int c = 0; c < class_means.rows(); ++c) consider(c);
    else
        for (int c : candidates) consider(c);
    return best;
}

double nearest_true_mean_accuracy(const DatasetSplit& split) {
    require<ContractError>(split.class_means.rows() == split.num_classes(),
                           "nearest_true_mean_accuracy: split has no stored class means");
    require<ContractError>(!split.test.empty(), "nearest_true_mean_accuracy: empty test set");
    int correct = 0;
    for (const auto& s : split.test)
        if (nearest_true_mean(split.class_means, {}, s.image) == s.class_index) ++correct;
    return static_cast<double>(correct) / static_cast<double>(split.test.size());
}

}  // namespace gcr
