#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "galu/data_io.hpp"
#include "galu/experiments.hpp"
#include "galu/kernels.hpp"
#include "galu/network.hpp"
#include "galu/paths.hpp"

namespace py = pybind11;
using namespace galu;

namespace {

using NpArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const NpArray& a) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (int d : t.shape()) shape.push_back(d);
    py::array_t<double> out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

std::vector<Tensor> rows_of(const NpArray& x) {
    if (x.ndim() != 2) throw std::invalid_argument("expected a 2-d array of inputs");
    std::vector<Tensor> rows;
    const int n = static_cast<int>(x.shape(0)), d = static_cast<int>(x.shape(1));
    for (int i = 0; i < n; ++i) {
        Tensor r({d});
        for (int j = 0; j < d; ++j) r[j] = x.data()[i * d + j];
        rows.push_back(std::move(r));
    }
    return rows;
}

py::array_t<double> gram_to_numpy(const GramMatrix& g) {
    py::array_t<double> out({g.n, g.n});
    std::copy(g.data.begin(), g.data.end(), out.mutable_data());
    return out;
}

ArchKind parse_kind(const std::string& s) {
    if (s == "FC") return ArchKind::FC;
    if (s == "CONV_GAP") return ArchKind::CONV_GAP;
    if (s == "RESNET") return ArchKind::RESNET;
    throw std::invalid_argument("unknown architecture kind '" + s + "'");
}

Family parse_family(const std::string& s) {
    if (s == "DNN") return Family::DNN;
    if (s == "DGN") return Family::DGN;
    if (s == "DLGN") return Family::DLGN;
    if (s == "DLGN_SHALLOW") return Family::DLGN_SHALLOW;
    throw std::invalid_argument("unknown family '" + s + "'");
}

GatingMode parse_gating(const std::string& s) {
    if (s == "HARD") return GatingMode::HARD;
    if (s == "SOFT") return GatingMode::SOFT;
    throw std::invalid_argument("unknown gating mode '" + s + "'");
}

InitScheme parse_init(const std::string& s, double param) {
    if (s == "BERNOULLI_PM_SIGMA") return {InitKind::BERNOULLI_PM_SIGMA, param};
    if (s == "GAUSSIAN_FAN_IN") return {InitKind::GAUSSIAN_FAN_IN, param};
    if (s == "BERNOULLI_NTK") return {InitKind::BERNOULLI_NTK, param};
    throw std::invalid_argument("unknown init scheme '" + s + "'");
}

ArchSpec make_spec(const std::string& kind, int d_in, int w, int out_dim, int d, int d_cv,
                   int w_cv, int d_fc, int b, int d_blk, const std::string& pooling,
                   int pool_window) {
    ArchSpec s;
    s.kind = parse_kind(kind);
    s.d_in = d_in;
    s.w = w;
    s.out_dim = out_dim;
    s.d = d;
    s.d_cv = d_cv;
    s.w_cv = w_cv;
    s.d_fc = d_fc;
    s.b = b;
    s.d_blk = d_blk;
    s.pooling = pooling == "MAX" ? Pooling::MAX : Pooling::AVG;
    s.pool_window = pool_window;
    s.validate();
    return s;
}

Dataset dataset_from(const NpArray& x, const py::array_t<long>& y, int classes) {
    Dataset d;
    d.inputs = to_tensor(x);
    if (d.inputs.ndim() != 2) throw std::invalid_argument("inputs must be [n, d_in]");
    for (py::ssize_t i = 0; i < y.size(); ++i) d.labels.push_back(static_cast<int>(y.data()[i]));
    if (static_cast<int>(d.labels.size()) != d.inputs.dim(0))
        throw std::invalid_argument("label count does not match inputs");
    d.classes = classes;
    return d;
}

TrainConfig config_from(double lr, int epochs, int batch_size, const std::string& optimizer,
                        const std::string& loss, const std::string& mode, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.lr = lr;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.optimizer = optimizer == "SGD_MOMENTUM" ? TrainConfig::Opt::SGD_MOMENTUM
                                                : TrainConfig::Opt::ADAM;
    cfg.loss = loss == "MSE" ? TrainConfig::Loss::MSE : TrainConfig::Loss::SOFTMAX_CE;
    cfg.mode = mode == "PG" ? TrainConfig::Mode::PG : TrainConfig::Mode::ST;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Gated networks in the path basis: forwards, path features, kernels.";

    py::class_<ArchSpec>(m, "ArchSpec")
        .def(py::init(&make_spec), py::arg("kind"), py::arg("d_in"), py::arg("w"),
             py::arg("out_dim") = 1, py::arg("d") = 0, py::arg("d_cv") = 0, py::arg("w_cv") = 0,
             py::arg("d_fc") = 0, py::arg("b") = 0, py::arg("d_blk") = 0,
             py::arg("pooling") = "AVG", py::arg("pool_window") = 0)
        .def_readonly("d_in", &ArchSpec::d_in)
        .def_readonly("w", &ArchSpec::w)
        .def_readonly("out_dim", &ArchSpec::out_dim)
        .def("gated_layer_count", &ArchSpec::gated_layer_count)
        .def("serialize", &ArchSpec::serialize)
        .def("__repr__", [](const ArchSpec& s) { return "<ArchSpec " + s.serialize() + ">"; });

    py::class_<GatingNet>(m, "GatingNet")
        .def_property_readonly("spec", [](const GatingNet& g) { return g.spec; })
        .def("gates", [](const GatingNet& g, const NpArray& x) {
            const GateStack gs = gates_for(g, to_tensor(x));
            std::vector<py::array_t<double>> out;
            for (const Tensor& t : gs.gates) out.push_back(to_numpy(t));
            return out;
        });

    py::class_<Model>(m, "Model")
        .def_property_readonly("spec", [](const Model& m2) { return m2.spec; })
        .def("forward",
             [](const Model& m2, const NpArray& x) { return to_numpy(model_forward(m2, to_tensor(x))); })
        .def("gating_net",
             [](const Model& m2) {
                 if (!m2.gating) throw std::invalid_argument("model has no gating network");
                 return GatingNet{m2.spec, m2.kind, *m2.gating};
             })
        .def("npv",
             [](const Model& m2, int logit) { return to_numpy(npv(m2.value, logit)); },
             py::arg("logit") = 0)
        .def("npf",
             [](const Model& m2, const NpArray& x) {
                 if (!m2.gating) throw std::invalid_argument("model has no gating network");
                 GatingNet g{m2.spec, m2.kind, *m2.gating};
                 const Tensor xt = to_tensor(x);
                 return to_numpy(npf(xt, gates_for(g, xt), m2.spec));
             })
        .def("output_via_paths",
             [](const Model& m2, const NpArray& x, int logit) {
                 if (!m2.gating) throw std::invalid_argument("model has no gating network");
                 GatingNet g{m2.spec, m2.kind, *m2.gating};
                 return output_via_paths(to_tensor(x), g, m2.value, logit);
             },
             py::arg("x"), py::arg("logit") = 0)
        .def("value_hash", [](const Model& m2) { return m2.value.content_hash(); });

    m.def(
        "make_gating_net",
        [](const ArchSpec& spec, const std::string& family, std::uint64_t seed,
           const std::string& gating, double beta, const std::string& init, double init_param) {
            RngStream rng(seed, 0x6A7E);
            return make_gating_net(spec, parse_family(family), parse_init(init, init_param), rng,
                                   parse_gating(gating), beta);
        },
        py::arg("spec"), py::arg("family") = "DGN", py::arg("seed") = 1,
        py::arg("gating") = "HARD", py::arg("beta") = 10.0,
        py::arg("init") = "GAUSSIAN_FAN_IN", py::arg("init_param") = 1.0);

    m.def(
        "make_model",
        [](const ArchSpec& spec, const std::string& family, std::uint64_t seed,
           const std::string& gating, double beta, const std::string& init, double init_param,
           bool all_ones_input) {
            RngStream rng(seed, 0x30DE1);
            Model mm = make_model(spec, {parse_family(family), parse_gating(gating), beta},
                                  parse_init(init, init_param), rng);
            if (all_ones_input) mm.value_input = ValueInput::ONES;
            return mm;
        },
        py::arg("spec"), py::arg("family") = "DNN", py::arg("seed") = 1, py::arg("gating") = "HARD",
        py::arg("beta") = 10.0, py::arg("init") = "GAUSSIAN_FAN_IN", py::arg("init_param") = 1.0,
        py::arg("all_ones_input") = false);

    m.def("count_paths", [](const ArchSpec& s) { return count_paths(s); });
    m.def("count_bundles", [](const ArchSpec& s) { return count_bundles(s); });
    m.def("circ_add", &circ_add, py::arg("i"), py::arg("r"), py::arg("d_in"));
    m.def("rotate", [](const NpArray& x, int r) { return to_numpy(rotate(to_tensor(x), r)); });
    m.def("conv1d_circular", [](const NpArray& z, const NpArray& k) {
        return to_numpy(conv1d_circular(to_tensor(z), to_tensor(k)));
    });
    m.def("global_average_pool",
          [](const NpArray& z) { return to_numpy(global_average_pool(to_tensor(z))); });
    m.def("max_pool_1d", [](const NpArray& z, int window) {
        return to_numpy(max_pool_1d(to_tensor(z), window));
    });

    m.def("npk_bruteforce", [](const GatingNet& g, const NpArray& x) {
        return gram_to_numpy(npk_bruteforce(g, rows_of(x)));
    });
    m.def("npk_closed", [](const GatingNet& g, const NpArray& x) {
        return gram_to_numpy(npk_closed(g, rows_of(x)));
    });
    m.def(
        "empirical_ntk",
        [](const Model& mm, const NpArray& x, const std::string& scope) {
            return gram_to_numpy(empirical_ntk(
                mm, rows_of(x), scope == "all" ? ParamScope::ALL : ParamScope::VALUE_NET));
        },
        py::arg("model"), py::arg("x"), py::arg("scope") = "value");

    m.def("limit_constants", [](const ArchSpec& spec, double c_scale) {
        const LimitConstants lc = limit_constants(spec, c_scale);
        py::dict d;
        d["sigma"] = lc.sigma;
        d["sigma_cv"] = lc.sigma_cv;
        d["sigma_fc"] = lc.sigma_fc;
        d["fc_const"] = lc.fc_const;
        d["beta_cv"] = lc.beta_cv;
        d["conv_const"] = lc.conv_const;
        d["beta_res"] = lc.beta_res;
        return d;
    });

    m.def(
        "kernel_ridge_predict",
        [](const NpArray& k_train, const NpArray& y, const NpArray& k_test, double lam) {
            if (k_train.ndim() != 2 || k_train.shape(0) != k_train.shape(1))
                throw std::invalid_argument("k_train must be square");
            GramMatrix g;
            g.n = static_cast<int>(k_train.shape(0));
            g.data.assign(k_train.data(), k_train.data() + k_train.size());
            std::vector<double> labels(y.data(), y.data() + y.size());
            return kernel_ridge_predict(g, labels, to_tensor(k_test), lam);
        },
        py::arg("k_train"), py::arg("y"), py::arg("k_test_train"), py::arg("lam"));

    m.def(
        "gen_synthetic",
        [](const std::string& kind, int n, int d_in, int classes, double noise,
           std::uint64_t seed) {
            const Dataset d = gen_synthetic(
                kind == "SPIRALS" ? SynthKind::TWO_SPIRALS : SynthKind::GAUSSIAN_BLOBS, n, d_in,
                classes, noise, seed);
            py::array_t<long> labels(d.labels.size());
            for (size_t i = 0; i < d.labels.size(); ++i) labels.mutable_data()[i] = d.labels[i];
            return py::make_tuple(to_numpy(d.inputs), labels);
        },
        py::arg("kind"), py::arg("n"), py::arg("d_in"), py::arg("classes") = 2,
        py::arg("noise") = 0.3, py::arg("seed") = 1);

    m.def(
        "train_model",
        [](Model mm, const NpArray& x, const py::array_t<long>& y, const NpArray& xt,
           const py::array_t<long>& yt, int classes, double lr, int epochs, int batch_size,
           const std::string& optimizer, const std::string& loss, const std::string& mode,
           std::uint64_t seed) {
            const Dataset tr = dataset_from(x, y, classes);
            const Dataset te = dataset_from(xt, yt, classes);
            auto [trained, res] =
                train(std::move(mm), tr, te, config_from(lr, epochs, batch_size, optimizer, loss, mode, seed));
            py::dict metrics;
            metrics["test_accuracy"] = res.test_accuracy;
            metrics["train_loss"] = res.train_loss;
            metrics["train_acc"] = res.train_acc;
            metrics["weight_hash"] = res.weight_hash;
            return py::make_tuple(std::move(trained), metrics);
        },
        py::arg("model"), py::arg("x"), py::arg("y"), py::arg("x_test"), py::arg("y_test"),
        py::arg("classes") = 2, py::arg("lr") = 3e-4, py::arg("epochs") = 30,
        py::arg("batch_size") = 32, py::arg("optimizer") = "ADAM", py::arg("loss") = "SOFTMAX_CE",
        py::arg("mode") = "ST", py::arg("seed") = 1);
}
