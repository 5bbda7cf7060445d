#include "ghostnoise/config.hpp"

#include <stdexcept>

#include "json.hpp"

namespace ghostnoise {

namespace {

using nlohmann::json;

void expect_keys(const json& obj, const std::string& path,
                 std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* key : allowed) {
            if (item.key() == key) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw std::runtime_error("config: unknown key '" + path + "." +
                                     item.key() + "'");
        }
    }
}

Granularity parse_granularity(const json& j, const std::string& path) {
    const std::string g = j.get<std::string>();
    if (g == "elementwise") return Granularity::elementwise;
    if (g == "channelwise") return Granularity::channelwise;
    throw std::runtime_error("config: bad granularity '" + g + "' at " + path);
}

Injector parse_injector(const json& j, const std::string& path) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "none") {
        expect_keys(j, path, {"kind"});
        return NoInjector{};
    }
    if (kind == "gni") {
        expect_keys(j, path, {"kind", "ghost_size", "eps", "mode"});
        GniInjector inj;
        inj.cfg.ghost_size = j.at("ghost_size").get<std::size_t>();
        if (j.contains("eps")) inj.cfg.eps = j.at("eps").get<double>();
        if (j.contains("mode")) {
            const std::string m = j.at("mode").get<std::string>();
            if (m == "full") {
                inj.cfg.mode = NoiseMode::full;
            } else if (m == "shift_only") {
                inj.cfg.mode = NoiseMode::shift_only;
            } else if (m == "scale_only") {
                inj.cfg.mode = NoiseMode::scale_only;
            } else {
                throw std::runtime_error("config: bad gni mode '" + m +
                                         "' at " + path);
            }
        }
        return inj;
    }
    if (kind == "agni") {
        expect_keys(j, path, {"kind", "ghost_size", "granularity"});
        AgniInjector inj;
        inj.ghost_size = j.at("ghost_size").get<std::size_t>();
        if (j.contains("granularity")) {
            const std::string g = j.at("granularity").get<std::string>();
            if (g == "per_channel") {
                inj.granularity = AgniGranularity::per_channel;
            } else if (g == "per_sample_channel") {
                inj.granularity = AgniGranularity::per_sample_channel;
            } else {
                throw std::runtime_error("config: bad agni granularity '" + g +
                                         "' at " + path);
            }
        }
        return inj;
    }
    if (kind == "gaussian_dropout") {
        expect_keys(j, path, {"kind", "p", "granularity"});
        GaussianDropoutInjector inj;
        inj.p = j.at("p").get<double>();
        if (j.contains("granularity")) {
            inj.granularity =
                parse_granularity(j.at("granularity"), path + ".granularity");
        }
        return inj;
    }
    if (kind == "bernoulli_dropout") {
        expect_keys(j, path, {"kind", "p", "granularity"});
        BernoulliDropoutInjector inj;
        inj.p = j.at("p").get<double>();
        if (j.contains("granularity")) {
            inj.granularity =
                parse_granularity(j.at("granularity"), path + ".granularity");
        }
        return inj;
    }
    if (kind == "eagn") {
        expect_keys(j, path, {"kind", "sigma", "post_affine"});
        EagnInjector inj;
        inj.sigma = j.at("sigma").get<double>();
        if (j.contains("post_affine")) {
            inj.post_affine = j.at("post_affine").get<bool>();
        }
        return inj;
    }
    throw std::runtime_error("config: unknown injector kind '" + kind +
                             "' at " + path);
}

void parse_norm(const json& j, const std::string& path, LayerSpec& ls) {
    expect_keys(j, path, {"kind", "ghost_size", "eps"});
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "none") {
        ls.norm = NormKind::none;
    } else if (kind == "batch_norm") {
        ls.norm = NormKind::batch_norm;
    } else if (kind == "ghost_batch_norm") {
        ls.norm = NormKind::ghost_batch_norm;
    } else if (kind == "exclusive_batch_norm") {
        ls.norm = NormKind::exclusive_batch_norm;
    } else if (kind == "layer_norm") {
        ls.norm = NormKind::layer_norm;
    } else {
        throw std::runtime_error("config: unknown norm kind '" + kind +
                                 "' at " + path);
    }
    if (j.contains("ghost_size")) {
        ls.ghost_size = j.at("ghost_size").get<std::size_t>();
    }
    if (j.contains("eps")) {
        ls.norm_eps = j.at("eps").get<double>();
    }
}

LayerSpec parse_layer(const json& j, const std::string& path,
                      const LayerSpec& defaults) {
    expect_keys(j, path, {"norm", "injector"});
    LayerSpec ls = defaults;
    if (j.contains("norm")) {
        parse_norm(j.at("norm"), path + ".norm", ls);
    }
    if (j.contains("injector")) {
        ls.injector = parse_injector(j.at("injector"), path + ".injector");
    }
    return ls;
}

SweepParam parse_sweep_param(const std::string& name) {
    if (name == "gni_ghost_size") return SweepParam::gni_ghost_size;
    if (name == "agni_ghost_size") return SweepParam::agni_ghost_size;
    if (name == "dropout_p") return SweepParam::dropout_p;
    if (name == "eagn_sigma") return SweepParam::eagn_sigma;
    if (name == "norm_ghost_size") return SweepParam::norm_ghost_size;
    throw std::runtime_error("config: unknown sweep param '" + name + "'");
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    const json root = json::parse(json_text);
    expect_keys(root, "$", {"model", "train", "data", "sweep"});

    ExperimentConfig cfg;

    if (root.contains("model")) {
        const json& m = root.at("model");
        expect_keys(m, "model",
                    {"input_dim", "hidden_widths", "classes", "ema_decay",
                     "norm", "injector", "layers"});
        if (m.contains("input_dim")) {
            cfg.model.input_dim = m.at("input_dim").get<std::size_t>();
        } else {
            cfg.model.input_dim = 0;
        }
        if (m.contains("hidden_widths")) {
            cfg.model.hidden_widths =
                m.at("hidden_widths").get<std::vector<std::size_t>>();
        }
        cfg.model.classes =
            m.contains("classes") ? m.at("classes").get<std::size_t>() : 0;
        if (m.contains("ema_decay")) {
            cfg.model.ema_decay = m.at("ema_decay").get<double>();
        }
        LayerSpec defaults;
        if (m.contains("norm")) {
            parse_norm(m.at("norm"), "model.norm", defaults);
        }
        if (m.contains("injector")) {
            defaults.injector =
                parse_injector(m.at("injector"), "model.injector");
        }
        cfg.model.layers.assign(cfg.model.hidden_widths.size(), defaults);
        if (m.contains("layers")) {
            const json& layers = m.at("layers");
            if (layers.size() != cfg.model.hidden_widths.size()) {
                throw std::runtime_error(
                    "config: model.layers must have one entry per hidden "
                    "width");
            }
            for (std::size_t i = 0; i < layers.size(); ++i) {
                cfg.model.layers[i] =
                    parse_layer(layers[i],
                                "model.layers[" + std::to_string(i) + "]",
                                defaults);
            }
        }
    } else {
        cfg.model.input_dim = 0;
        cfg.model.classes = 0;
    }

    if (root.contains("train")) {
        const json& t = root.at("train");
        expect_keys(t, "train",
                    {"learning_rate", "momentum", "weight_decay", "epochs",
                     "warmup_epochs", "batch_size", "seed", "eval_fraction",
                     "trace_epochs"});
        if (t.contains("learning_rate")) {
            cfg.train.learning_rate = t.at("learning_rate").get<double>();
        }
        if (t.contains("momentum")) {
            cfg.train.momentum = t.at("momentum").get<double>();
        }
        if (t.contains("weight_decay")) {
            cfg.train.weight_decay = t.at("weight_decay").get<double>();
        }
        if (t.contains("epochs")) {
            cfg.train.epochs = t.at("epochs").get<std::size_t>();
        }
        if (t.contains("warmup_epochs")) {
            cfg.train.warmup_epochs = t.at("warmup_epochs").get<std::size_t>();
        }
        if (t.contains("batch_size")) {
            cfg.train.batch_size = t.at("batch_size").get<std::size_t>();
        }
        if (t.contains("seed")) {
            cfg.train.seed = t.at("seed").get<std::uint64_t>();
        }
        if (t.contains("eval_fraction")) {
            cfg.train.eval_fraction = t.at("eval_fraction").get<double>();
        }
        if (t.contains("trace_epochs")) {
            cfg.train.trace_epochs =
                t.at("trace_epochs").get<std::vector<int>>();
        }
    }

    if (root.contains("data")) {
        const json& d = root.at("data");
        const std::string kind =
            d.contains("kind") ? d.at("kind").get<std::string>() : "blobs";
        if (kind == "blobs") {
            expect_keys(d, "data",
                        {"kind", "n", "dim", "classes", "separation",
                         "label_noise", "seed"});
            cfg.data.kind = DataConfig::Kind::blobs;
            if (d.contains("n")) cfg.data.n = d.at("n").get<std::size_t>();
            if (d.contains("dim")) {
                cfg.data.dim = d.at("dim").get<std::size_t>();
            }
            if (d.contains("classes")) {
                cfg.data.classes = d.at("classes").get<std::size_t>();
            }
            if (d.contains("separation")) {
                cfg.data.separation = d.at("separation").get<double>();
            }
            if (d.contains("label_noise")) {
                cfg.data.label_noise = d.at("label_noise").get<double>();
            }
            if (d.contains("seed")) {
                cfg.data.seed = d.at("seed").get<std::uint64_t>();
            }
        } else if (kind == "idx") {
            expect_keys(d, "data", {"kind", "images", "labels", "subset",
                                    "classes", "seed"});
            cfg.data.kind = DataConfig::Kind::idx;
            cfg.data.images = d.at("images").get<std::string>();
            cfg.data.labels = d.at("labels").get<std::string>();
            if (d.contains("subset")) {
                cfg.data.subset = d.at("subset").get<std::size_t>();
            }
            if (d.contains("classes")) {
                cfg.data.classes = d.at("classes").get<std::size_t>();
            } else {
                cfg.data.classes = 10;
            }
            if (d.contains("seed")) {
                cfg.data.seed = d.at("seed").get<std::uint64_t>();
            }
        } else {
            throw std::runtime_error("config: unknown data kind '" + kind +
                                     "'");
        }
    }

    if (root.contains("sweep")) {
        const json& s = root.at("sweep");
        expect_keys(s, "sweep", {"param", "values", "seeds"});
        SweepConfig sc;
        sc.axis.param = parse_sweep_param(s.at("param").get<std::string>());
        sc.axis.values = s.at("values").get<std::vector<double>>();
        sc.seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
        cfg.sweep = std::move(sc);
    }

    return cfg;
}

Dataset build_dataset(const DataConfig& cfg, double eval_fraction) {
    if (cfg.kind == DataConfig::Kind::blobs) {
        return make_blobs(cfg.n, cfg.dim, cfg.classes, cfg.separation,
                          cfg.label_noise, RngStream(cfg.seed));
    }
    IdxData idx = load_idx(cfg.images, cfg.labels);
    Matrix x = std::move(idx.x);
    std::vector<int> y = std::move(idx.y);
    if (cfg.subset > 0 && cfg.subset < x.rows) {
        Matrix xs(cfg.subset, x.cols);
        std::copy(x.data.begin(),
                  x.data.begin() + static_cast<long>(cfg.subset * x.cols),
                  xs.data.begin());
        y.resize(cfg.subset);
        x = std::move(xs);
    }
    return split_dataset(x, y, cfg.classes, eval_fraction,
                         RngStream(cfg.seed, 1));
}

void resolve_model(MlpSpec& spec, const Dataset& data) {
    if (spec.input_dim == 0) {
        spec.input_dim = data.dim();
    }
    if (spec.classes == 0) {
        spec.classes = data.classes;
    }
    if (spec.layers.empty()) {
        spec.layers.assign(spec.hidden_widths.size(), LayerSpec{});
    }
}

}  // namespace ghostnoise
