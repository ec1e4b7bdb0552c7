#include "qfm/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

#include "qfm/errors.hpp"

namespace qfm {

using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void bad_field(const std::string& path, const std::string& what) {
    throw config_error("'" + path + "' " + what);
}

std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

void check_keys(const ordered_json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw config_error("unknown field '" + join(path, it.key()) + "'");
    }
}

const ordered_json* find(const ordered_json& obj, const char* key) {
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &it.value();
}

const ordered_json& need_object(const ordered_json& v, const std::string& path) {
    if (!v.is_object()) bad_field(path, "must be an object");
    return v;
}

double as_number(const ordered_json& v, const std::string& path) {
    if (!v.is_number()) bad_field(path, "must be a number");
    return v.get<double>();
}

int as_int(const ordered_json& v, const std::string& path) {
    if (!v.is_number_integer()) bad_field(path, "must be an integer");
    return v.get<int>();
}

std::uint64_t as_seed(const ordered_json& v, const std::string& path) {
    if (!(v.is_number_integer() && v.get<std::int64_t>() >= 0) && !v.is_number_unsigned())
        bad_field(path, "must be a non-negative integer");
    return v.get<std::uint64_t>();
}

std::string as_string(const ordered_json& v, const std::string& path) {
    if (!v.is_string()) bad_field(path, "must be a string");
    return v.get<std::string>();
}

bool as_bool(const ordered_json& v, const std::string& path) {
    if (!v.is_boolean()) bad_field(path, "must be true or false");
    return v.get<bool>();
}

template <typename T, typename Parse>
T as_enum(const ordered_json& v, const std::string& path, Parse parse) {
    const std::string s = as_string(v, path);
    try {
        return parse(s);
    } catch (const config_error&) {
        bad_field(path, "has unknown value '" + s + "'");
    }
}

AxisConfig parse_axis(const ordered_json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 3) bad_field(path, "must be [lo, hi, count]");
    AxisConfig axis;
    axis.lo = as_number(v[0], path + "[0]");
    axis.hi = as_number(v[1], path + "[1]");
    axis.count = as_int(v[2], path + "[2]");
    return axis;
}

ordered_json axis_json(const AxisConfig& axis) {
    return ordered_json::array({axis.lo, axis.hi, axis.count});
}

} // namespace

ExperimentKind parse_experiment_kind(const std::string& name) {
    if (name == "fit_cosine") return ExperimentKind::fit_cosine;
    if (name == "richness_sweep") return ExperimentKind::richness_sweep;
    if (name == "spectrum") return ExperimentKind::spectrum;
    if (name == "solve_nse") return ExperimentKind::solve_nse;
    throw config_error("unknown experiment '" + name + "'");
}

std::string to_string(ExperimentKind kind) {
    switch (kind) {
    case ExperimentKind::fit_cosine: return "fit_cosine";
    case ExperimentKind::richness_sweep: return "richness_sweep";
    case ExperimentKind::spectrum: return "spectrum";
    case ExperimentKind::solve_nse: return "solve_nse";
    }
    throw config_error("invalid experiment kind");
}

Entangler parse_entangler(const std::string& name) {
    if (name == "cx_ring") return Entangler::cx_ring;
    if (name == "analog_zz_ring") return Entangler::analog_zz_ring;
    throw config_error("unknown entangler '" + name + "'");
}

std::string to_string(Entangler entangler) {
    return entangler == Entangler::cx_ring ? "cx_ring" : "analog_zz_ring";
}

RotationSchedule parse_rotation_schedule(const std::string& name) {
    if (name == "ry_rz") return RotationSchedule::ry_rz;
    if (name == "rx_ry_rz") return RotationSchedule::rx_ry_rz;
    throw config_error("unknown rotation schedule '" + name + "'");
}

std::string to_string(RotationSchedule schedule) {
    return schedule == RotationSchedule::ry_rz ? "ry_rz" : "rx_ry_rz";
}

EncodingLayout parse_encoding_layout(const std::string& name) {
    if (name == "single") return EncodingLayout::single;
    if (name == "parallel") return EncodingLayout::parallel;
    if (name == "parallel_split") return EncodingLayout::parallel_split;
    if (name == "serial") return EncodingLayout::serial;
    throw config_error("unknown encoding layout '" + name + "'");
}

std::string to_string(EncodingLayout layout) {
    switch (layout) {
    case EncodingLayout::single: return "single";
    case EncodingLayout::parallel: return "parallel";
    case EncodingLayout::parallel_split: return "parallel_split";
    case EncodingLayout::serial: return "serial";
    }
    throw config_error("invalid encoding layout");
}

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::string& source_name) {
    ordered_json root;
    try {
        root = ordered_json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw config_error(source_name + ": " + e.what());
    }
    if (!root.is_object()) throw config_error(source_name + ": top level must be an object");
    check_keys(root, "", {"experiment", "output", "seed", "model", "training", "dataset", "sweep", "nse"});

    ExperimentConfig config;
    const ordered_json* v = find(root, "experiment");
    if (v == nullptr) throw config_error("missing required field 'experiment'");
    config.experiment = as_enum<ExperimentKind>(*v, "experiment", parse_experiment_kind);

    if ((v = find(root, "output")) != nullptr) config.output = as_string(*v, "output");
    if ((v = find(root, "seed")) != nullptr) config.seed = as_seed(*v, "seed");

    if ((v = find(root, "model")) != nullptr) {
        const ordered_json& m = need_object(*v, "model");
        check_keys(m, "model",
                   {"qubits", "ansatz_layers", "entangler", "rotations", "feature_map", "encoding",
                    "reupload", "input_scale"});
        const ordered_json* f;
        if ((f = find(m, "qubits")) != nullptr) config.model.qubits = as_int(*f, "model.qubits");
        if ((f = find(m, "ansatz_layers")) != nullptr)
            config.model.ansatz_layers = as_int(*f, "model.ansatz_layers");
        if ((f = find(m, "entangler")) != nullptr)
            config.model.entangler = as_enum<Entangler>(*f, "model.entangler", parse_entangler);
        if ((f = find(m, "rotations")) != nullptr)
            config.model.rotations =
                as_enum<RotationSchedule>(*f, "model.rotations", parse_rotation_schedule);
        if ((f = find(m, "feature_map")) != nullptr)
            config.model.feature_map =
                as_enum<FeatureMapKind>(*f, "model.feature_map", parse_feature_map_kind);
        if ((f = find(m, "encoding")) != nullptr)
            config.model.encoding =
                as_enum<EncodingLayout>(*f, "model.encoding", parse_encoding_layout);
        if ((f = find(m, "reupload")) != nullptr)
            config.model.reupload = as_bool(*f, "model.reupload");
        if ((f = find(m, "input_scale")) != nullptr)
            config.model.input_scale = as_number(*f, "model.input_scale");
    }

    if ((v = find(root, "training")) != nullptr) {
        const ordered_json& tr = need_object(*v, "training");
        check_keys(tr, "training", {"iterations", "batch_size", "learning_rate"});
        const ordered_json* f;
        if ((f = find(tr, "iterations")) != nullptr)
            config.training.iterations = as_int(*f, "training.iterations");
        if ((f = find(tr, "batch_size")) != nullptr)
            config.training.batch_size = as_int(*f, "training.batch_size");
        if ((f = find(tr, "learning_rate")) != nullptr)
            config.training.learning_rate = as_number(*f, "training.learning_rate");
    }

    if ((v = find(root, "dataset")) != nullptr) {
        const ordered_json& ds = need_object(*v, "dataset");
        check_keys(ds, "dataset", {"frequencies", "lo", "hi", "count"});
        const ordered_json* f;
        if ((f = find(ds, "frequencies")) != nullptr) {
            if (!f->is_array() || f->empty()) bad_field("dataset.frequencies", "must be a non-empty array");
            config.dataset.frequencies.clear();
            for (std::size_t i = 0; i < f->size(); ++i)
                config.dataset.frequencies.push_back(
                    as_number((*f)[i], "dataset.frequencies[" + std::to_string(i) + "]"));
        }
        if ((f = find(ds, "lo")) != nullptr) config.dataset.lo = as_number(*f, "dataset.lo");
        if ((f = find(ds, "hi")) != nullptr) config.dataset.hi = as_number(*f, "dataset.hi");
        if ((f = find(ds, "count")) != nullptr) config.dataset.count = as_int(*f, "dataset.count");
    }

    if ((v = find(root, "sweep")) != nullptr) {
        const ordered_json& sw = need_object(*v, "sweep");
        check_keys(sw, "sweep", {"max_frequencies", "feature_maps", "seeds"});
        const ordered_json* f;
        if ((f = find(sw, "max_frequencies")) != nullptr)
            config.sweep.max_frequencies = as_int(*f, "sweep.max_frequencies");
        if ((f = find(sw, "feature_maps")) != nullptr) {
            if (!f->is_array() || f->empty()) bad_field("sweep.feature_maps", "must be a non-empty array");
            config.sweep.feature_maps.clear();
            for (std::size_t i = 0; i < f->size(); ++i)
                config.sweep.feature_maps.push_back(
                    as_enum<FeatureMapKind>((*f)[i], "sweep.feature_maps[" + std::to_string(i) + "]",
                                            parse_feature_map_kind));
        }
        if ((f = find(sw, "seeds")) != nullptr) {
            if (!f->is_array() || f->empty()) bad_field("sweep.seeds", "must be a non-empty array");
            config.sweep.seeds.clear();
            for (std::size_t i = 0; i < f->size(); ++i)
                config.sweep.seeds.push_back(as_seed((*f)[i], "sweep.seeds[" + std::to_string(i) + "]"));
        }
    }

    if ((v = find(root, "nse")) != nullptr) {
        const ordered_json& ns = need_object(*v, "nse");
        check_keys(ns, "nse", {"reynolds", "source", "x", "y", "t", "data_stride"});
        const ordered_json* f;
        if ((f = find(ns, "reynolds")) != nullptr)
            config.nse.reynolds = as_number(*f, "nse.reynolds");
        if ((f = find(ns, "source")) != nullptr) config.nse.source = as_string(*f, "nse.source");
        if ((f = find(ns, "x")) != nullptr) config.nse.x = parse_axis(*f, "nse.x");
        if ((f = find(ns, "y")) != nullptr) config.nse.y = parse_axis(*f, "nse.y");
        if ((f = find(ns, "t")) != nullptr) config.nse.t = parse_axis(*f, "nse.t");
        if ((f = find(ns, "data_stride")) != nullptr) {
            if (!f->is_array() || f->size() != 2) bad_field("nse.data_stride", "must be [stride_x, stride_y]");
            config.nse.data_stride_x = as_int((*f)[0], "nse.data_stride[0]");
            config.nse.data_stride_y = as_int((*f)[1], "nse.data_stride[1]");
        }
    }

    validate_experiment_config(config);
    return config;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_experiment_config(buffer.str(), path);
}

void validate_experiment_config(const ExperimentConfig& config) {
    if (config.model.qubits < 1 || config.model.qubits > kDefaultQubitCap)
        bad_field("model.qubits", "must be between 1 and " + std::to_string(kDefaultQubitCap));
    if (config.model.ansatz_layers < 0) bad_field("model.ansatz_layers", "must be non-negative");
    if (!(config.model.input_scale > 0.0)) bad_field("model.input_scale", "must be positive");

    const bool needs_training = config.experiment != ExperimentKind::spectrum;
    if (needs_training) {
        if (config.training.iterations < 0) bad_field("training.iterations", "must be non-negative");
        if (config.training.batch_size < 1) bad_field("training.batch_size", "must be at least 1");
        if (!(config.training.learning_rate > 0.0))
            bad_field("training.learning_rate", "must be positive");
    }

    switch (config.experiment) {
    case ExperimentKind::fit_cosine:
    case ExperimentKind::spectrum:
        if (config.dataset.frequencies.empty())
            bad_field("dataset.frequencies", "must be a non-empty array");
        for (double w : config.dataset.frequencies)
            if (!(w > 0.0)) bad_field("dataset.frequencies", "must contain positive frequencies");
        if (!(config.dataset.hi > config.dataset.lo)) bad_field("dataset.hi", "must exceed dataset.lo");
        if (config.dataset.count != -1 && config.dataset.count < 2)
            bad_field("dataset.count", "must be -1 (Nyquist) or at least 2");
        if (config.model.encoding != EncodingLayout::single)
            bad_field("model.encoding", "must be 'single' for one-dimensional experiments");
        break;
    case ExperimentKind::richness_sweep:
        if (config.sweep.max_frequencies < 1 || config.sweep.max_frequencies > 12)
            bad_field("sweep.max_frequencies", "must be between 1 and 12");
        if (config.sweep.feature_maps.empty())
            bad_field("sweep.feature_maps", "must be a non-empty array");
        if (config.sweep.seeds.empty()) bad_field("sweep.seeds", "must be a non-empty array");
        if (!(config.dataset.hi > config.dataset.lo)) bad_field("dataset.hi", "must exceed dataset.lo");
        if (config.model.encoding != EncodingLayout::single)
            bad_field("model.encoding", "must be 'single' for one-dimensional experiments");
        break;
    case ExperimentKind::solve_nse: {
        if (!(config.nse.reynolds > 0.0)) bad_field("nse.reynolds", "must be positive");
        if (config.nse.source.empty()) bad_field("nse.source", "must name a reference source");
        const AxisConfig* axes[3] = {&config.nse.x, &config.nse.y, &config.nse.t};
        const char* names[3] = {"nse.x", "nse.y", "nse.t"};
        for (int d = 0; d < 3; ++d) {
            if (axes[d]->count < 2) bad_field(names[d], "needs at least 2 grid points");
            if (!(axes[d]->hi > axes[d]->lo)) bad_field(names[d], "must satisfy hi > lo");
        }
        if (config.nse.data_stride_x < 1) bad_field("nse.data_stride[0]", "must be at least 1");
        if (config.nse.data_stride_y < 1) bad_field("nse.data_stride[1]", "must be at least 1");
        break;
    }
    }
}

std::string canonical_config_json(const ExperimentConfig& config) {
    ordered_json root;
    root["experiment"] = to_string(config.experiment);
    root["output"] = config.output;
    root["seed"] = config.seed;

    ordered_json m;
    m["qubits"] = config.model.qubits;
    m["ansatz_layers"] = config.model.ansatz_layers;
    m["entangler"] = to_string(config.model.entangler);
    m["rotations"] = to_string(config.model.rotations);
    m["feature_map"] = to_string(config.model.feature_map);
    m["encoding"] = to_string(config.model.encoding);
    m["reupload"] = config.model.reupload;
    m["input_scale"] = config.model.input_scale;
    root["model"] = m;

    ordered_json tr;
    tr["iterations"] = config.training.iterations;
    tr["batch_size"] = config.training.batch_size;
    tr["learning_rate"] = config.training.learning_rate;
    root["training"] = tr;

    ordered_json ds;
    ds["frequencies"] = config.dataset.frequencies;
    ds["lo"] = config.dataset.lo;
    ds["hi"] = config.dataset.hi;
    ds["count"] = config.dataset.count;
    root["dataset"] = ds;

    ordered_json sw;
    sw["max_frequencies"] = config.sweep.max_frequencies;
    ordered_json maps = ordered_json::array();
    for (FeatureMapKind kind : config.sweep.feature_maps) maps.push_back(to_string(kind));
    sw["feature_maps"] = maps;
    sw["seeds"] = config.sweep.seeds;
    root["sweep"] = sw;

    ordered_json ns;
    ns["reynolds"] = config.nse.reynolds;
    ns["source"] = config.nse.source;
    ns["x"] = axis_json(config.nse.x);
    ns["y"] = axis_json(config.nse.y);
    ns["t"] = axis_json(config.nse.t);
    ns["data_stride"] = ordered_json::array({config.nse.data_stride_x, config.nse.data_stride_y});
    root["nse"] = ns;

    return root.dump(2) + "\n";
}

} // namespace qfm
