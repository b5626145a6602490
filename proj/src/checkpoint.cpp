#include "gcr/checkpoint.hpp"

#include "gcr/io.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

using json = nlohmann::json;

namespace gcr {

std::string to_string(ExtractorProfile profile) {
    switch (profile) {
        case ExtractorProfile::conv4_28x28: return "conv4_28x28";
        case ExtractorProfile::conv4_84x84: return "conv4_84x84";
        case ExtractorProfile::mlp: return "mlp";
        case ExtractorProfile::identity: return "identity";
    }
    return "?";
}

ExtractorProfile extractor_profile_from_string(const std::string& s) {
    if (s == "conv4_28x28") return ExtractorProfile::conv4_28x28;
    if (s == "conv4_84x84") return ExtractorProfile::conv4_84x84;
    if (s == "mlp") return ExtractorProfile::mlp;
    if (s == "identity") return ExtractorProfile::identity;
    throw ConfigError("unknown extractor profile: " + s);
}

namespace {

std::string bn_base_name(const BatchNorm& bn) {
    const std::string& g = bn.gamma.name;  // "<base>.gamma"
    return g.substr(0, g.size() - std::string(".gamma").size());
}

std::vector<BatchNorm*> all_batchnorms(Model& model) {
    std::vector<BatchNorm*> out = model.extractor.batchnorms();
    for (BatchNorm* bn : model.registration.batchnorms()) out.push_back(bn);
    return out;
}

json vec_to_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Vec vec_from_json(const json& a) {
    Vec v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
    return v;
}

}  // namespace

void save_checkpoint(Model& model, const std::string& path, const CheckpointExtras& extras) {
    ArrayFile file = ArrayFile::create(path);
    for (Parameter* p : model.parameters()) {
        file.write("params/" + p->name, p->value);
        file.write("velocity/" + p->name, p->velocity);
    }
    for (BatchNorm* bn : all_batchnorms(model)) {
        file.write("bn/" + bn_base_name(*bn) + "/mean", bn->running_mean);
        file.write("bn/" + bn_base_name(*bn) + "/var", bn->running_var);
    }
    file.write("train/episode", std::vector<int>{static_cast<int>(extras.episode)});
    file.write_string("train/rng_state", extras.rng_state);

    const auto& ec = model.extractor.config();
    const auto& rc = model.registration.config();
    json manifest;
    manifest["kind"] = "model-checkpoint";
    manifest["ablation"] = to_string(model.ablation);
    manifest["extractor"] = {{"profile", to_string(ec.profile)},
                             {"input_dim", ec.input_dim},
                             {"channels", ec.channels},
                             {"mlp_hidden", ec.mlp_hidden},
                             {"feature_dim", model.extractor.feature_dim()}};
    manifest["registration"] = {{"embed_width", rc.embed_width},
                                {"identity", rc.identity},
                                {"init_std", rc.init_std}};
    manifest["classes"] = model.table.class_names();
    manifest["input_mean"] = vec_to_json(model.extractor.input_mean());
    manifest["input_std"] = vec_to_json(model.extractor.input_std());
    manifest["episode"] = extras.episode;

    std::ofstream out(path + ".json");
    require<IngestionError>(static_cast<bool>(out), "cannot write manifest " + path + ".json");
    out << manifest.dump(2) << "\n";
}

Model load_checkpoint(const std::string& path, CheckpointExtras* extras) {
    std::ifstream manifest_in(path + ".json");
    require<ConfigError>(static_cast<bool>(manifest_in),
                         "missing checkpoint manifest " + path + ".json");
    json manifest = json::parse(manifest_in);
    require<ConfigError>(manifest.value("kind", "") == "model-checkpoint",
                         "not a model checkpoint: " + path);

    ExtractorConfig ec;
    ec.profile = extractor_profile_from_string(manifest["extractor"]["profile"].get<std::string>());
    ec.input_dim = manifest["extractor"]["input_dim"].get<int>();
    ec.channels = manifest["extractor"]["channels"].get<int>();
    ec.mlp_hidden = manifest["extractor"]["mlp_hidden"].get<int>();

    RegistrationConfig rc;
    rc.embed_width = manifest["registration"]["embed_width"].get<int>();
    rc.identity = manifest["registration"]["identity"].get<bool>();
    rc.init_std = manifest["registration"]["init_std"].get<double>();

    Model model;
    model.extractor = FeatureExtractor(ec);
    model.registration = RegistrationModule(model.extractor.feature_dim(), rc);
    model.ablation = ablation_from_string(manifest["ablation"].get<std::string>());

    ArrayFile file = ArrayFile::open_readonly(path);
    std::vector<std::string> classes;
    for (const auto& c : manifest["classes"]) classes.push_back(c.get<std::string>());
    model.table = GlobalTable(classes, file.read_mat("params/table.reps"));

    for (Parameter* p : model.parameters()) {
        Mat value = file.read_mat("params/" + p->name);
        require<IngestionError>(value.rows() == p->value.rows() && value.cols() == p->value.cols(),
                                "checkpoint: shape mismatch for " + p->name);
        p->value = std::move(value);
        if (file.has("velocity/" + p->name)) p->velocity = file.read_mat("velocity/" + p->name);
    }
    for (BatchNorm* bn : all_batchnorms(model)) {
        bn->running_mean = file.read_vec("bn/" + bn_base_name(*bn) + "/mean");
        bn->running_var = file.read_vec("bn/" + bn_base_name(*bn) + "/var");
    }
    if (ec.profile != ExtractorProfile::identity)
        model.extractor.set_input_normalization(vec_from_json(manifest["input_mean"]),
                                                vec_from_json(manifest["input_std"]));

    if (extras) {
        extras->episode = manifest.value("episode", 0L);
        extras->rng_state = file.read_string("train/rng_state");
    }
    return model;
}

std::string table_checksum(const GlobalTable& table) {
    const Mat& m = table.values();
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << hash;
    return os.str();
}

}  // namespace gcr
