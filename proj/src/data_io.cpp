#include "galu/data_io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "galu/hash.hpp"
#include "json.hpp"

namespace galu {

Tensor Dataset::row(int i) const {
    if (i < 0 || i >= size()) throw std::invalid_argument("dataset: row index out of range");
    const int d = input_dim();
    Tensor r({d});
    for (int j = 0; j < d; ++j) r[j] = inputs.at2(i, j);
    return r;
}

std::uint64_t Dataset::content_hash() const {
    Fnv1a h;
    h.i32(size());
    h.i32(input_dim());
    h.i32(classes);
    for (int l : labels) h.i32(l);
    for (int i = 0; i < inputs.size(); ++i) h.f64(inputs[i]);
    return h.state;
}

Dataset gen_synthetic(SynthKind kind, int n, int d_in, int classes, double noise,
                      std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("gen_synthetic: need at least two classes");
    if (n < classes) throw std::invalid_argument("gen_synthetic: need at least one sample per class");
    if (noise < 0) throw std::invalid_argument("gen_synthetic: noise must be non-negative");
    if (kind == SynthKind::TWO_SPIRALS && classes != 2)
        throw std::invalid_argument("gen_synthetic: spirals are a two-class task");
    if (kind == SynthKind::TWO_SPIRALS && d_in < 2)
        throw std::invalid_argument("gen_synthetic: spirals need d_in >= 2");

    Dataset d;
    d.classes = classes;
    d.inputs = Tensor({n, d_in});
    d.labels.resize(static_cast<size_t>(n));

    RngStream rng(seed, 0xDA7A);

    if (kind == SynthKind::GAUSSIAN_BLOBS) {
        std::vector<Tensor> centers;
        for (int c = 0; c < classes; ++c) {
            Tensor v({d_in});
            if (classes == 2 && c == 1) {
                v = scale(centers[0], -1.0);  // antipodal pair stays separable at any d_in
            } else {
                double norm = 0.0;
                for (int j = 0; j < d_in; ++j) {
                    v[j] = rng.gaussian();
                    norm += v[j] * v[j];
                }
                norm = std::sqrt(std::max(norm, 1e-12));
                for (int j = 0; j < d_in; ++j) v[j] = 3.0 * v[j] / norm;
            }
            centers.push_back(std::move(v));
        }
        for (int i = 0; i < n; ++i) {
            const int label = i % classes;
            d.labels[static_cast<size_t>(i)] = label;
            for (int j = 0; j < d_in; ++j)
                d.inputs.at2(i, j) = centers[static_cast<size_t>(label)][j] + noise * rng.gaussian();
        }
    } else {
        const double turns = 2.0;
        const int arm_size = (n + 1) / 2;
        // radial positions are dealt out in shuffled order per arm so any
        // prefix split covers the whole spiral
        std::vector<int> radial(static_cast<size_t>(arm_size));
        for (int i = 0; i < arm_size; ++i) radial[static_cast<size_t>(i)] = i;
        for (int i = arm_size - 1; i > 0; --i)
            std::swap(radial[static_cast<size_t>(i)],
                      radial[static_cast<size_t>(rng.uniform_int(i + 1))]);
        for (int i = 0; i < n; ++i) {
            const int label = i % 2;
            d.labels[static_cast<size_t>(i)] = label;
            const double t = 0.15 + 0.85 * (radial[static_cast<size_t>(i / 2)] + 0.5) / arm_size;
            const double angle = t * turns * 2.0 * std::numbers::pi +
                                 (label == 1 ? std::numbers::pi : 0.0);
            d.inputs.at2(i, 0) = t * std::cos(angle) + noise * rng.gaussian();
            d.inputs.at2(i, 1) = t * std::sin(angle) + noise * rng.gaussian();
            // the networks here are bias-free, so their decision regions are
            // cones through the origin; coordinate 2 carries a constant 1 as
            // a homogeneous embedding, making the spiral learnable for them
            if (d_in >= 3) d.inputs.at2(i, 2) = 1.0;
            for (int j = 3; j < d_in; ++j) d.inputs.at2(i, j) = noise * rng.gaussian();
        }
    }
    return d;
}

namespace {

std::uint32_t read_u32_be(std::istream& f, std::size_t offset, const std::string& path) {
    unsigned char buf[4];
    f.read(reinterpret_cast<char*>(buf), 4);
    if (!f)
        throw std::runtime_error("idx: unexpected end of " + path + " at offset " +
                                 std::to_string(offset));
    return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw std::runtime_error("idx: cannot open " + images_path);
    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw std::runtime_error("idx: cannot open " + labels_path);

    const std::uint32_t magic_i = read_u32_be(fi, 0, images_path);
    if (magic_i != 0x00000803u)
        throw std::runtime_error("idx: bad image magic at offset 0 in " + images_path);
    const std::uint32_t n_images = read_u32_be(fi, 4, images_path);
    const std::uint32_t rows = read_u32_be(fi, 8, images_path);
    const std::uint32_t cols = read_u32_be(fi, 12, images_path);

    const std::uint32_t magic_l = read_u32_be(fl, 0, labels_path);
    if (magic_l != 0x00000801u)
        throw std::runtime_error("idx: bad label magic at offset 0 in " + labels_path);
    const std::uint32_t n_labels = read_u32_be(fl, 4, labels_path);

    if (n_images != n_labels)
        throw std::runtime_error("idx: image count " + std::to_string(n_images) +
                                 " does not match label count " + std::to_string(n_labels));

    const int n = static_cast<int>(n_images);
    const int d = static_cast<int>(rows * cols);
    Dataset ds;
    ds.inputs = Tensor({n, d});
    ds.labels.resize(static_cast<size_t>(n));

    std::vector<unsigned char> pixels(static_cast<size_t>(n) * d);
    fi.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!fi)
        throw std::runtime_error("idx: truncated pixel data at offset " +
                                 std::to_string(16 + fi.gcount()) + " in " + images_path);
    for (int i = 0; i < n * d; ++i) ds.inputs[i] = pixels[static_cast<size_t>(i)] / 255.0;

    std::vector<unsigned char> labels(static_cast<size_t>(n));
    fl.read(reinterpret_cast<char*>(labels.data()), n);
    if (!fl)
        throw std::runtime_error("idx: truncated label data at offset " +
                                 std::to_string(8 + fl.gcount()) + " in " + labels_path);
    int max_label = 0;
    for (int i = 0; i < n; ++i) {
        ds.labels[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)];
        max_label = std::max(max_label, static_cast<int>(labels[static_cast<size_t>(i)]));
    }
    ds.classes = max_label + 1;
    return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, int n_train) {
    if (n_train < 1 || n_train >= d.size())
        throw std::invalid_argument("split_dataset: both splits must be non-empty");
    const int dim = d.input_dim();
    Dataset a, b;
    a.classes = b.classes = d.classes;
    a.split = "train";
    b.split = "test";
    a.inputs = Tensor({n_train, dim});
    b.inputs = Tensor({d.size() - n_train, dim});
    for (int i = 0; i < n_train; ++i) {
        a.labels.push_back(d.labels[static_cast<size_t>(i)]);
        for (int j = 0; j < dim; ++j) a.inputs.at2(i, j) = d.inputs.at2(i, j);
    }
    for (int i = n_train; i < d.size(); ++i) {
        b.labels.push_back(d.labels[static_cast<size_t>(i)]);
        for (int j = 0; j < dim; ++j) b.inputs.at2(i - n_train, j) = d.inputs.at2(i, j);
    }
    return {std::move(a), std::move(b)};
}

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

const char* family_name(Family f) {
    switch (f) {
        case Family::DNN: return "DNN";
        case Family::DGN: return "DGN";
        case Family::DLGN: return "DLGN";
        case Family::DLGN_SHALLOW: return "DLGN_SHALLOW";
    }
    return "?";
}

Family parse_family(const std::string& s) {
    if (s == "DNN") return Family::DNN;
    if (s == "DGN") return Family::DGN;
    if (s == "DLGN") return Family::DLGN;
    if (s == "DLGN_SHALLOW") return Family::DLGN_SHALLOW;
    throw std::invalid_argument("config: unknown family '" + s + "'");
}

}  // namespace

std::string ExperimentConfig::serialize() const {
    std::ostringstream os;
    os << "[arch]\n";
    {
        std::istringstream is(arch.serialize());
        std::string tok;
        while (is >> tok) {
            const auto eq = tok.find('=');
            os << tok.substr(0, eq) << " = " << tok.substr(eq + 1) << "\n";
        }
    }
    os << "\n[model]\n";
    os << "family = " << family_name(model.family) << "\n";
    os << "gating = " << (model.gating == GatingMode::HARD ? "HARD" : "SOFT") << "\n";
    os << "beta = " << fmt_double(model.beta) << "\n";
    os << "\n[init]\n";
    switch (init.kind) {
        case InitKind::BERNOULLI_PM_SIGMA: os << "scheme = BERNOULLI_PM_SIGMA\n"; break;
        case InitKind::GAUSSIAN_FAN_IN: os << "scheme = GAUSSIAN_FAN_IN\n"; break;
        case InitKind::BERNOULLI_NTK: os << "scheme = BERNOULLI_NTK\n"; break;
    }
    os << "param = " << fmt_double(init.param) << "\n";
    os << "\n[train]\n";
    os << "optimizer = "
       << (train.optimizer == TrainConfig::Opt::ADAM ? "ADAM" : "SGD_MOMENTUM") << "\n";
    os << "lr = " << fmt_double(train.lr) << "\n";
    os << "momentum = " << fmt_double(train.momentum) << "\n";
    os << "adam_beta1 = " << fmt_double(train.adam_beta1) << "\n";
    os << "adam_beta2 = " << fmt_double(train.adam_beta2) << "\n";
    os << "adam_eps = " << fmt_double(train.adam_eps) << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "epochs = " << train.epochs << "\n";
    os << "loss = " << (train.loss == TrainConfig::Loss::SOFTMAX_CE ? "SOFTMAX_CE" : "MSE") << "\n";
    os << "mode = " << (train.mode == TrainConfig::Mode::ST ? "ST" : "PG") << "\n";
    os << "train_seed = " << train.seed << "\n";
    os << "\n[data]\n";
    switch (data.kind) {
        case DataConfig::Kind::BLOBS: os << "kind = BLOBS\n"; break;
        case DataConfig::Kind::SPIRALS: os << "kind = SPIRALS\n"; break;
        case DataConfig::Kind::IDX: os << "kind = IDX\n"; break;
    }
    os << "n_train = " << data.n_train << "\n";
    os << "n_test = " << data.n_test << "\n";
    os << "classes = " << data.classes << "\n";
    os << "noise = " << fmt_double(data.noise) << "\n";
    if (!data.images_path.empty()) os << "images = " << data.images_path << "\n";
    if (!data.labels_path.empty()) os << "labels = " << data.labels_path << "\n";
    if (!data.test_images_path.empty()) os << "test_images = " << data.test_images_path << "\n";
    if (!data.test_labels_path.empty()) os << "test_labels = " << data.test_labels_path << "\n";
    os << "\n[run]\n";
    os << "seed = " << seed << "\n";
    os << "out_dir = " << out_dir << "\n";
    return os.str();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line, section, arch_line;
    while (std::getline(is, line)) {
        // strip comments and whitespace
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);

        if (line.front() == '[') {
            if (line.back() != ']') throw std::invalid_argument("config: bad section '" + line + "'");
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key = value, got '" + line + "'");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
        };
        trim(key);
        trim(val);

        if (section == "arch") {
            arch_line += key + "=" + val + " ";
        } else if (section == "model") {
            if (key == "family") cfg.model.family = parse_family(val);
            else if (key == "gating") cfg.model.gating = val == "HARD" ? GatingMode::HARD : GatingMode::SOFT;
            else if (key == "beta") cfg.model.beta = std::stod(val);
            else throw std::invalid_argument("config: unknown model key '" + key + "'");
        } else if (section == "init") {
            if (key == "scheme") {
                if (val == "BERNOULLI_PM_SIGMA") cfg.init.kind = InitKind::BERNOULLI_PM_SIGMA;
                else if (val == "GAUSSIAN_FAN_IN") cfg.init.kind = InitKind::GAUSSIAN_FAN_IN;
                else if (val == "BERNOULLI_NTK") cfg.init.kind = InitKind::BERNOULLI_NTK;
                else throw std::invalid_argument("config: unknown init scheme '" + val + "'");
            } else if (key == "param") cfg.init.param = std::stod(val);
            else throw std::invalid_argument("config: unknown init key '" + key + "'");
        } else if (section == "train") {
            if (key == "optimizer")
                cfg.train.optimizer = val == "ADAM" ? TrainConfig::Opt::ADAM : TrainConfig::Opt::SGD_MOMENTUM;
            else if (key == "lr") cfg.train.lr = std::stod(val);
            else if (key == "momentum") cfg.train.momentum = std::stod(val);
            else if (key == "adam_beta1") cfg.train.adam_beta1 = std::stod(val);
            else if (key == "adam_beta2") cfg.train.adam_beta2 = std::stod(val);
            else if (key == "adam_eps") cfg.train.adam_eps = std::stod(val);
            else if (key == "batch_size") cfg.train.batch_size = std::stoi(val);
            else if (key == "epochs") cfg.train.epochs = std::stoi(val);
            else if (key == "loss")
                cfg.train.loss = val == "MSE" ? TrainConfig::Loss::MSE : TrainConfig::Loss::SOFTMAX_CE;
            else if (key == "mode")
                cfg.train.mode = val == "PG" ? TrainConfig::Mode::PG : TrainConfig::Mode::ST;
            else if (key == "train_seed") cfg.train.seed = std::stoull(val);
            else throw std::invalid_argument("config: unknown train key '" + key + "'");
        } else if (section == "data") {
            if (key == "kind") {
                if (val == "BLOBS") cfg.data.kind = DataConfig::Kind::BLOBS;
                else if (val == "SPIRALS") cfg.data.kind = DataConfig::Kind::SPIRALS;
                else if (val == "IDX") cfg.data.kind = DataConfig::Kind::IDX;
                else throw std::invalid_argument("config: unknown data kind '" + val + "'");
            } else if (key == "n_train") cfg.data.n_train = std::stoi(val);
            else if (key == "n_test") cfg.data.n_test = std::stoi(val);
            else if (key == "classes") cfg.data.classes = std::stoi(val);
            else if (key == "noise") cfg.data.noise = std::stod(val);
            else if (key == "images") cfg.data.images_path = val;
            else if (key == "labels") cfg.data.labels_path = val;
            else if (key == "test_images") cfg.data.test_images_path = val;
            else if (key == "test_labels") cfg.data.test_labels_path = val;
            else throw std::invalid_argument("config: unknown data key '" + key + "'");
        } else if (section == "run") {
            if (key == "seed") cfg.seed = std::stoull(val);
            else if (key == "out_dir") cfg.out_dir = val;
            else throw std::invalid_argument("config: unknown run key '" + key + "'");
        } else {
            throw std::invalid_argument("config: key outside any section: '" + key + "'");
        }
    }
    if (arch_line.empty()) throw std::invalid_argument("config: missing [arch] section");
    cfg.arch = ArchSpec::parse(arch_line);
    return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse(os.str());
}

std::uint64_t ExperimentConfig::spec_hash() const {
    Fnv1a h;
    h.str(arch.serialize());
    return h.state;
}

std::pair<Dataset, Dataset> load_config_data(const ExperimentConfig& cfg) {
    if (cfg.data.kind == DataConfig::Kind::IDX) {
        auto resolve = [](const std::string& p) {
            if (p.empty() || p.front() == '/' || std::filesystem::exists(p)) return p;
            const char* cache = std::getenv("GALUPATH_CACHE");
            if (cache) {
                const std::string joined = std::string(cache) + "/" + p;
                if (std::filesystem::exists(joined)) return joined;
            }
            return p;
        };
        Dataset train = load_idx(resolve(cfg.data.images_path), resolve(cfg.data.labels_path));
        train.split = "train";
        Dataset test = load_idx(resolve(cfg.data.test_images_path), resolve(cfg.data.test_labels_path));
        test.split = "test";
        if (cfg.data.n_train > 0 && cfg.data.n_train < train.size())
            train = split_dataset(train, cfg.data.n_train).first;
        if (cfg.data.n_test > 0 && cfg.data.n_test < test.size())
            test = split_dataset(test, cfg.data.n_test).first;
        return {std::move(train), std::move(test)};
    }
    const SynthKind kind = cfg.data.kind == DataConfig::Kind::BLOBS ? SynthKind::GAUSSIAN_BLOBS
                                                                    : SynthKind::TWO_SPIRALS;
    Dataset all = gen_synthetic(kind, cfg.data.n_train + cfg.data.n_test, cfg.arch.d_in,
                                cfg.data.classes, cfg.data.noise, cfg.seed);
    return split_dataset(all, cfg.data.n_train);
}

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void append_ledger(const std::string& path, const LedgerRow& row) {
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream f(path, std::ios::app);
    if (!f) throw std::runtime_error("ledger: cannot open " + path);
    if (fresh)
        f << "run_id,subcommand,spec_hash,seed,permutation_id,mode,test_accuracy,wall_seconds\n";
    f << row.run_id << ',' << row.subcommand << ',' << row.spec_hash << ',' << row.seed << ','
      << row.permutation_id << ',' << row.mode << ',' << fmt_double(row.test_accuracy) << ','
      << fmt_double(row.wall_seconds) << "\n";
}

std::vector<LedgerRow> read_ledger(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("ledger: cannot open " + path);
    std::vector<LedgerRow> rows;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        LedgerRow r;
        std::string seed, acc, wall;
        std::getline(is, r.run_id, ',');
        std::getline(is, r.subcommand, ',');
        std::getline(is, r.spec_hash, ',');
        std::getline(is, seed, ',');
        std::getline(is, r.permutation_id, ',');
        std::getline(is, r.mode, ',');
        std::getline(is, acc, ',');
        std::getline(is, wall, ',');
        r.seed = std::stoull(seed);
        r.test_accuracy = std::stod(acc);
        r.wall_seconds = std::stod(wall);
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_gram_csv(const GramMatrix& g, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("gram: cannot open " + path);
    f << "# provenance=" << provenance_name(g.provenance) << " spec=" << to_hex(g.spec_hash())
      << " n=" << g.n << "\n";
    for (int i = 0; i < g.n; ++i) {
        for (int j = 0; j < g.n; ++j) {
            if (j) f << ',';
            f << fmt_double(g.at(i, j));
        }
        f << "\n";
    }
}

GramMatrix read_gram_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("gram: cannot open " + path);
    std::string header;
    std::getline(f, header);
    GramMatrix g;
    std::istringstream hs(header);
    std::string tok;
    hs >> tok;  // '#'
    while (hs >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "provenance") {
            if (val == "NPK_BRUTE") g.provenance = Provenance::NPK_BRUTE;
            else if (val == "NPK_CLOSED") g.provenance = Provenance::NPK_CLOSED;
            else if (val == "NTK_EMPIRICAL") g.provenance = Provenance::NTK_EMPIRICAL;
        } else if (key == "spec") {
            g.spec = "hash:" + val;
        } else if (key == "n") {
            g.n = std::stoi(val);
        }
    }
    g.data.reserve(static_cast<size_t>(g.n) * g.n);
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string cell;
        while (std::getline(is, cell, ',')) g.data.push_back(std::stod(cell));
    }
    if (static_cast<int>(g.data.size()) != g.n * g.n)
        throw std::runtime_error("gram: expected " + std::to_string(g.n * g.n) + " cells, got " +
                                 std::to_string(g.data.size()));
    return g;
}

void write_gram_binary(const GramMatrix& g, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("gram: cannot open " + path);
    f << "GALUGRAM 1 " << provenance_name(g.provenance) << " " << to_hex(g.spec_hash()) << " "
      << g.n << "\n";
    for (double v : g.data) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        char buf[8];
        for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
        f.write(buf, 8);
    }
}

GramMatrix read_gram_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("gram: cannot open " + path);
    std::string line;
    std::getline(f, line);
    std::istringstream is(line);
    std::string magic, version, prov, hash;
    GramMatrix g;
    is >> magic >> version >> prov >> hash >> g.n;
    if (magic != "GALUGRAM") throw std::runtime_error("gram: bad magic in " + path);
    if (prov == "NPK_BRUTE") g.provenance = Provenance::NPK_BRUTE;
    else if (prov == "NPK_CLOSED") g.provenance = Provenance::NPK_CLOSED;
    else g.provenance = Provenance::NTK_EMPIRICAL;
    g.spec = "hash:" + hash;
    g.data.resize(static_cast<size_t>(g.n) * g.n);
    for (double& v : g.data) {
        char buf[8];
        f.read(buf, 8);
        if (!f) throw std::runtime_error("gram: truncated binary data in " + path);
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
        v = std::bit_cast<double>(bits);
    }
    return g;
}

void write_run_json(const std::string& path, const ExperimentConfig& cfg, const RunResult& res,
                    const std::string& subcommand, const std::string& run_id) {
    nlohmann::json j;
    j["run_id"] = run_id;
    j["subcommand"] = subcommand;
    j["seed"] = cfg.seed;
    j["spec_hash"] = to_hex(cfg.spec_hash());
    j["config"] = cfg.serialize();
    j["metrics"]["test_accuracy"] = res.test_accuracy;
    j["metrics"]["train_loss"] = res.train_loss;
    j["metrics"]["train_acc"] = res.train_acc;
    j["metrics"]["wall_seconds"] = res.wall_seconds;
    j["weight_hash"] = to_hex(res.weight_hash);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("run json: cannot open " + path);
    f << j.dump(2) << "\n";
}

std::string make_run_id(const ExperimentConfig& cfg, const std::string& subcommand,
                        std::uint64_t seed) {
    Fnv1a h;
    h.str(cfg.serialize());
    h.str(subcommand);
    h.u64(seed);
    return to_hex(h.state);
}

DirLock::DirLock(const std::string& dir) {
    std::filesystem::create_directories(dir);
    path_ = dir + "/.galupath.lock";
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw std::runtime_error("output directory " + dir +
                                 " is locked by another run (found " + path_ + ")");
    ::close(fd);
    owned_ = true;
}

DirLock::~DirLock() {
    if (owned_) ::unlink(path_.c_str());
}

}  // namespace galu
