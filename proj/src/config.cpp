#include "gcr/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace gcr {

namespace {

using SectionMap = std::map<std::string, std::map<std::string, std::string>>;

SectionMap read_ini(const std::string& path) {
    std::ifstream in(path);
    require<ConfigError>(static_cast<bool>(in), "cannot open config file: " + path);
    SectionMap sections;
    std::string line, current;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        std::string body = line.substr(first, last - first + 1);
        if (body[0] == '#' || body[0] == ';') continue;
        if (body.front() == '[') {
            require<ConfigError>(body.back() == ']',
                                 "config line " + std::to_string(line_no) + ": bad section header");
            current = body.substr(1, body.size() - 2);
            require<ConfigError>(!current.empty(),
                                 "config line " + std::to_string(line_no) + ": empty section name");
            sections.try_emplace(current);
            continue;
        }
        const auto eq = body.find('=');
        require<ConfigError>(eq != std::string::npos && !current.empty(),
                             "config line " + std::to_string(line_no) + ": expected key = value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        require<ConfigError>(!key.empty(), "config line " + std::to_string(line_no) + ": empty key");
        const bool fresh = sections[current].emplace(key, value).second;
        require<ConfigError>(fresh, "config: duplicate key '" + key + "' in [" + current + "]");
    }
    return sections;
}

// Typed readers that consume keys so leftovers can be rejected.
class SectionReader {
  public:
    SectionReader(SectionMap& sections, const std::string& name) : name_(name) {
        auto it = sections.find(name);
        if (it != sections.end()) entries_ = &it->second;
    }

    bool present() const { return entries_ != nullptr; }
    bool has(const std::string& key) const { return entries_ && entries_->count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        consumed_.insert(key);
        return entries_->at(key);
    }
    long integer(const std::string& key, long fallback) {
        if (!has(key)) return fallback;
        consumed_.insert(key);
        try {
            return std::stol(entries_->at(key));
        } catch (const std::exception&) {
            throw ConfigError("config: [" + name_ + "] " + key + " must be an integer");
        }
    }
    double real(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        consumed_.insert(key);
        try {
            return std::stod(entries_->at(key));
        } catch (const std::exception&) {
            throw ConfigError("config: [" + name_ + "] " + key + " must be a number");
        }
    }
    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        consumed_.insert(key);
        const std::string& v = entries_->at(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config: [" + name_ + "] " + key + " must be true or false");
    }

    void finish() const {
        if (!entries_) return;
        for (const auto& [key, value] : *entries_)
            if (!consumed_.count(key))
                throw ConfigError("config: unknown key '" + key + "' in [" + name_ + "]");
    }

  private:
    std::string name_;
    const std::map<std::string, std::string>* entries_{nullptr};
    std::set<std::string> consumed_;
};

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::istringstream is(csv);
    std::string item;
    while (std::getline(is, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& path) {
    SectionMap sections = read_ini(path);
    const std::set<std::string> known{"dataset", "model",     "pretrain", "training",
                                      "synthesis", "eval",    "run"};
    for (const auto& [name, entries] : sections)
        require<ConfigError>(known.count(name) > 0, "config: unknown section [" + name + "]");

    ExperimentConfig cfg;

    SectionReader run(sections, "run");
    require<ConfigError>(run.present() && run.has("seed"),
                         "config: [run] seed is mandatory");
    cfg.seed = static_cast<std::uint64_t>(run.integer("seed", 0));
    cfg.seed_set = true;
    cfg.output_dir = run.str("output_dir", cfg.output_dir);
    run.finish();

    SectionReader ds(sections, "dataset");
    {
        const std::string kind = ds.str("kind", "synthetic");
        if (kind == "synthetic") cfg.dataset.kind = DatasetKind::synthetic;
        else if (kind == "synthetic_file") cfg.dataset.kind = DatasetKind::synthetic_file;
        else if (kind == "omniglot") cfg.dataset.kind = DatasetKind::omniglot;
        else if (kind == "miniimagenet") cfg.dataset.kind = DatasetKind::miniimagenet;
        else throw ConfigError("config: unknown dataset kind '" + kind + "'");

        cfg.dataset.root = ds.str("root", "");
        cfg.dataset.n_few = static_cast<int>(ds.integer("n_few", cfg.dataset.n_few));
        const std::string val = ds.str("val", "skip");
        if (val == "skip") cfg.dataset.val_as_novel = false;
        else if (val == "novel") cfg.dataset.val_as_novel = true;
        else throw ConfigError("config: [dataset] val must be skip or novel");

        cfg.dataset.synthetic.n_base = static_cast<int>(ds.integer("n_base", 7));
        cfg.dataset.synthetic.n_novel = static_cast<int>(ds.integer("n_novel", 5));
        cfg.dataset.synthetic.dim = static_cast<int>(ds.integer("dim", 16));
        cfg.dataset.synthetic.samples_per_base =
            static_cast<int>(ds.integer("samples_per_base", 200));
        cfg.dataset.synthetic.test_per_class =
            static_cast<int>(ds.integer("test_per_class", 50));
        cfg.dataset.synthetic.class_separation = ds.real("class_separation", 6.0);
        cfg.dataset.synthetic.n_few = cfg.dataset.n_few;

        cfg.dataset.generalized = ds.boolean("generalized", false);
        cfg.dataset.per_base_train = static_cast<int>(ds.integer("per_base_train", 500));
        cfg.dataset.per_class_test = static_cast<int>(ds.integer("per_class_test", 100));
        cfg.dataset.seed = cfg.seed;
        cfg.dataset.synthetic.rng_seed = cfg.seed;
        ds.finish();
    }

    SectionReader model(sections, "model");
    cfg.model.channels = static_cast<int>(model.integer("channels", 64));
    cfg.model.mlp_hidden = static_cast<int>(model.integer("mlp_hidden", 64));
    cfg.model.embed_width = static_cast<int>(model.integer("embed_width", 512));
    model.finish();

    SectionReader pre(sections, "pretrain");
    cfg.pretrain.epochs = static_cast<int>(pre.integer("epochs", cfg.pretrain.epochs));
    cfg.pretrain.batch_size = static_cast<int>(pre.integer("batch_size", cfg.pretrain.batch_size));
    cfg.pretrain.lr = pre.real("lr", cfg.pretrain.lr);
    cfg.pretrain.momentum = pre.real("momentum", cfg.pretrain.momentum);
    cfg.pretrain.images_per_class =
        static_cast<int>(pre.integer("images_per_class", cfg.pretrain.images_per_class));
    pre.finish();

    SectionReader tr(sections, "training");
    cfg.training.ablation = ablation_from_string(tr.str("ablation", "B+S1+S2+R"));
    cfg.training.n_train = static_cast<int>(tr.integer("n_train", cfg.training.n_train));
    cfg.training.n_s = static_cast<int>(tr.integer("n_s", cfg.training.n_s));
    cfg.training.n_q = static_cast<int>(tr.integer("n_q", cfg.training.n_q));
    cfg.training.total_episodes = tr.integer("total_episodes", cfg.training.total_episodes);
    cfg.training.optimizer.base_lr = tr.real("base_lr", cfg.training.optimizer.base_lr);
    cfg.training.optimizer.momentum = tr.real("momentum", cfg.training.optimizer.momentum);
    cfg.training.optimizer.lr_decay_every =
        static_cast<int>(tr.integer("lr_decay_every", cfg.training.optimizer.lr_decay_every));
    cfg.training.optimizer.lr_decay_factor =
        tr.real("lr_decay_factor", cfg.training.optimizer.lr_decay_factor);
    cfg.training.checkpoint_every =
        static_cast<int>(tr.integer("checkpoint_every", cfg.training.checkpoint_every));
    cfg.training.rng_seed = cfg.seed;
    tr.finish();

    SectionReader synth(sections, "synthesis");
    const bool synth_keys_used = synth.present();
    cfg.training.synthesis.k_t =
        static_cast<int>(synth.integer("k_t", cfg.training.synthesis.k_t));
    if (synth.has("augmenters"))
        cfg.training.synthesis.augmenters = split_list(synth.str("augmenters", ""));
    cfg.training.synthesis.jitter_std =
        synth.real("jitter_std", cfg.training.synthesis.jitter_std);
    synth.finish();

    // Synthesis keys only make sense when step 1 or step 2 is enabled.
    if (synth_keys_used && !ablation_has_s1(cfg.training.ablation) &&
        !ablation_has_s2(cfg.training.ablation))
        throw ConfigError("config: ablation " + to_string(cfg.training.ablation) +
                          " disables synthesis; remove the [synthesis] section or enable S1/S2");

    SectionReader ev(sections, "eval");
    cfg.eval.n_test = static_cast<int>(ev.integer("n_test", cfg.eval.n_test));
    cfg.eval.n_q_test = static_cast<int>(ev.integer("n_q_test", cfg.eval.n_q_test));
    cfg.eval.episodes = static_cast<int>(ev.integer("episodes", cfg.eval.episodes));
    cfg.eval.generalized = ev.boolean("generalized", cfg.eval.generalized);
    cfg.eval.hard_selection = ev.boolean("hard_selection", cfg.eval.hard_selection);
    cfg.eval.refresh_table = ev.str("refresh_table", cfg.eval.refresh_table);
    require<ConfigError>(cfg.eval.refresh_table == "auto" || cfg.eval.refresh_table == "always" ||
                             cfg.eval.refresh_table == "never",
                         "config: [eval] refresh_table must be auto, always, or never");
    ev.finish();

    // Defaults for synthetic vector data: spatial augmenters do not apply.
    if ((cfg.dataset.kind == DatasetKind::synthetic ||
         cfg.dataset.kind == DatasetKind::synthetic_file) &&
        !synth.has("augmenters") && ablation_has_s1(cfg.training.ablation))
        cfg.training.synthesis.augmenters = {"feature_jitter"};

    return cfg;
}

std::string render_resolved_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "[run]\n";
    os << "seed = " << cfg.seed << "\n";
    os << "output_dir = " << cfg.output_dir << "\n\n";

    os << "[dataset]\n";
    const char* kind = cfg.dataset.kind == DatasetKind::synthetic        ? "synthetic"
                       : cfg.dataset.kind == DatasetKind::synthetic_file ? "synthetic_file"
                       : cfg.dataset.kind == DatasetKind::omniglot       ? "omniglot"
                                                                         : "miniimagenet";
    os << "kind = " << kind << "\n";
    os << "root = " << cfg.dataset.root << "\n";
    os << "n_few = " << cfg.dataset.n_few << "\n";
    os << "val = " << (cfg.dataset.val_as_novel ? "novel" : "skip") << "\n";
    if (cfg.dataset.kind == DatasetKind::synthetic) {
        os << "n_base = " << cfg.dataset.synthetic.n_base << "\n";
        os << "n_novel = " << cfg.dataset.synthetic.n_novel << "\n";
        os << "dim = " << cfg.dataset.synthetic.dim << "\n";
        os << "samples_per_base = " << cfg.dataset.synthetic.samples_per_base << "\n";
        os << "test_per_class = " << cfg.dataset.synthetic.test_per_class << "\n";
        os << "class_separation = " << cfg.dataset.synthetic.class_separation << "\n";
    }
    os << "generalized = " << (cfg.dataset.generalized ? "true" : "false") << "\n";
    if (cfg.dataset.generalized) {
        os << "per_base_train = " << cfg.dataset.per_base_train << "\n";
        os << "per_class_test = " << cfg.dataset.per_class_test << "\n";
    }
    os << "\n[model]\n";
    os << "channels = " << cfg.model.channels << "\n";
    os << "mlp_hidden = " << cfg.model.mlp_hidden << "\n";
    os << "embed_width = " << cfg.model.embed_width << "\n";

    os << "\n[pretrain]\n";
    os << "epochs = " << cfg.pretrain.epochs << "\n";
    os << "batch_size = " << cfg.pretrain.batch_size << "\n";
    os << "lr = " << cfg.pretrain.lr << "\n";
    os << "momentum = " << cfg.pretrain.momentum << "\n";
    os << "images_per_class = " << cfg.pretrain.images_per_class << "\n";

    os << "\n[training]\n";
    os << "ablation = " << to_string(cfg.training.ablation) << "\n";
    os << "n_train = " << cfg.training.n_train << "\n";
    os << "n_s = " << cfg.training.n_s << "\n";
    os << "n_q = " << cfg.training.n_q << "\n";
    os << "total_episodes = " << cfg.training.total_episodes << "\n";
    os << "base_lr = " << cfg.training.optimizer.base_lr << "\n";
    os << "momentum = " << cfg.training.optimizer.momentum << "\n";
    os << "lr_decay_every = " << cfg.training.optimizer.lr_decay_every << "\n";
    os << "lr_decay_factor = " << cfg.training.optimizer.lr_decay_factor << "\n";
    os << "checkpoint_every = " << cfg.training.checkpoint_every << "\n";

    if (ablation_has_s1(cfg.training.ablation) || ablation_has_s2(cfg.training.ablation)) {
        os << "\n[synthesis]\n";
        os << "k_t = " << cfg.training.synthesis.k_t << "\n";
        os << "augmenters = ";
        for (std::size_t i = 0; i < cfg.training.synthesis.augmenters.size(); ++i)
            os << (i ? "," : "") << cfg.training.synthesis.augmenters[i];
        os << "\n";
        os << "jitter_std = " << cfg.training.synthesis.jitter_std << "\n";
    }

    os << "\n[eval]\n";
    os << "n_test = " << cfg.eval.n_test << "\n";
    os << "n_q_test = " << cfg.eval.n_q_test << "\n";
    os << "episodes = " << cfg.eval.episodes << "\n";
    os << "generalized = " << (cfg.eval.generalized ? "true" : "false") << "\n";
    os << "hard_selection = " << (cfg.eval.hard_selection ? "true" : "false") << "\n";
    os << "refresh_table = " << cfg.eval.refresh_table << "\n";
    return os.str();
}

DatasetSplit load_dataset(const DatasetSection& section) {
    std::string root = section.root;
    if (const char* env = std::getenv("GCR_DATA_ROOT"); env && *env) root = env;

    DatasetSplit split;
    switch (section.kind) {
        case DatasetKind::synthetic: {
            SyntheticSpec spec = section.synthetic;
            split = make_synthetic_gaussian(spec);
            break;
        }
        case DatasetKind::synthetic_file:
            require<ConfigError>(!root.empty(), "dataset: synthetic_file needs a root path");
            split = load_synthetic_dataset(root);
            break;
        case DatasetKind::omniglot:
        case DatasetKind::miniimagenet: {
            require<ConfigError>(!root.empty(), "dataset: image datasets need a root path");
            LoadOptions opt;
            opt.n_few = section.n_few;
            opt.val_as_novel = section.val_as_novel;
            split = load_image_dataset(root,
                                       section.kind == DatasetKind::omniglot
                                           ? ImageProfile::omniglot
                                           : ImageProfile::miniimagenet,
                                       opt);
            break;
        }
    }
    if (section.generalized)
        split = make_generalized_split(split, section.n_few, section.per_base_train,
                                       section.per_class_test, section.seed);
    return split;
}

Model build_model(const ExperimentConfig& config, const DatasetSplit& split, Rng& rng) {
    ExtractorConfig ec;
    switch (config.dataset.kind) {
        case DatasetKind::omniglot:
            ec.profile = ExtractorProfile::conv4_28x28;
            break;
        case DatasetKind::miniimagenet:
            ec.profile = ExtractorProfile::conv4_84x84;
            break;
        case DatasetKind::synthetic:
        case DatasetKind::synthetic_file:
            ec.profile = ExtractorProfile::mlp;
            ec.input_dim = split.train.front().image.numel();
            break;
    }
    ec.channels = config.model.channels;
    ec.mlp_hidden = config.model.mlp_hidden;

    Model model;
    model.extractor = FeatureExtractor(ec);
    model.extractor.init(rng);
    RegistrationConfig rc;
    rc.embed_width = config.model.embed_width;
    model.registration = RegistrationModule(model.extractor.feature_dim(), rc);
    model.registration.init(rng);
    model.ablation = config.training.ablation;
    // The table is initialised after pretraining (feature means); a fresh
    // model carries a zero table of the right width so checkpoints compose.
    model.table = GlobalTable({}, Mat(0, model.extractor.feature_dim()));
    return model;
}

}  // namespace gcr
