#include "galu/tensor.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace galu {

namespace {

size_t shape_product(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
        n *= static_cast<size_t>(d);
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size())
        throw std::invalid_argument("tensor data length does not match shape");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::ones(std::vector<int> shape) {
    Tensor t(std::move(shape));
    for (int i = 0; i < t.size(); ++i) t[i] = 1.0;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

// splitmix64 finalizer; full-period bijective mixer on u64
std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t mix3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = mix64(a);
    h = mix64(h ^ (b + 0xD1B54A32D192ED03ull));
    h = mix64(h ^ (c + 0x8CB92BA72F3D8DD7ull));
    return h;
}

}  // namespace

std::uint64_t RngStream::next_u64() { return mix3(seed_, stream_, counter_++); }

double RngStream::uniform() {
    // top 53 bits -> [0,1); exact in IEEE double
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::pm_sigma(double sigma) { return (next_u64() & 1ull) ? sigma : -sigma; }

int RngStream::uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    // modulo bias is < 2^-50 for desk-scale n; acceptable here
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
}

RngStream RngStream::substream(std::uint64_t id) const {
    return RngStream(seed_, mix3(stream_, id, 0x5851F42D4C957F2Dull));
}

int circ_add(int i, int r, int d_in) {
    if (i < 1 || i > d_in)
        throw std::invalid_argument("circ_add: index " + std::to_string(i) + " outside [1.." +
                                    std::to_string(d_in) + "]");
    if (r < 0 || r >= d_in)
        throw std::invalid_argument("circ_add: shift " + std::to_string(r) + " outside [0.." +
                                    std::to_string(d_in - 1) + "]");
    int s = i + r;
    return s <= d_in ? s : s - d_in;
}

Tensor rotate(const Tensor& x, int r) {
    if (x.ndim() != 1) throw std::invalid_argument("rotate: expected a vector");
    const int d = x.dim(0);
    if (r < 0 || r >= d) throw std::invalid_argument("rotate: shift outside [0..d_in-1]");
    Tensor out({d});
    for (int i = 1; i <= d; ++i) out[i - 1] = x[circ_add(i, r, d) - 1];
    return out;
}

Tensor rotate_channels(const Tensor& z, int r) {
    if (z.ndim() != 2) throw std::invalid_argument("rotate_channels: expected [c, d]");
    const int c = z.dim(0), d = z.dim(1);
    Tensor out({c, d});
    for (int ch = 0; ch < c; ++ch)
        for (int i = 1; i <= d; ++i) out.at2(ch, i - 1) = z.at2(ch, circ_add(i, r, d) - 1);
    return out;
}

Tensor conv1d_circular(const Tensor& z, const Tensor& kernel) {
    if (z.ndim() != 2 || kernel.ndim() != 3)
        throw std::invalid_argument("conv1d_circular: expected z [c_in,d_in], kernel [w_cv,c_in,c_out]");
    const int c_in = z.dim(0), d_in = z.dim(1);
    const int w_cv = kernel.dim(0), c_out = kernel.dim(2);
    if (kernel.dim(1) != c_in)
        throw std::invalid_argument("conv1d_circular: kernel c_in mismatch");
    if (w_cv >= d_in)
        throw std::invalid_argument("conv1d_circular: window must be smaller than d_in");

    Tensor out({c_out, d_in});
    for (int co = 0; co < c_out; ++co)
        for (int p = 0; p < d_in; ++p) {
            double acc = 0.0;
            for (int k = 0; k < w_cv; ++k) {
                const int src = (p + k) % d_in;
                for (int ci = 0; ci < c_in; ++ci)
                    acc += kernel.at3(k, ci, co) * z.at2(ci, src);
            }
            out.at2(co, p) = acc;
        }
    return out;
}

Tensor global_average_pool(const Tensor& z) {
    if (z.ndim() != 2) throw std::invalid_argument("global_average_pool: expected [c, d]");
    const int c = z.dim(0), d = z.dim(1);
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int p = 0; p < d; ++p) acc += z.at2(ch, p);
        out[ch] = acc / d;
    }
    return out;
}

Tensor max_pool_1d(const Tensor& z, int window) {
    if (z.ndim() != 2) throw std::invalid_argument("max_pool_1d: expected [c, d]");
    const int c = z.dim(0), d = z.dim(1);
    if (window <= 0 || d % window != 0)
        throw std::invalid_argument("max_pool_1d: window must divide spatial size");
    const int out_d = d / window;
    Tensor out({c, out_d});
    for (int ch = 0; ch < c; ++ch)
        for (int j = 0; j < out_d; ++j) {
            double m = z.at2(ch, j * window);
            for (int k = 1; k < window; ++k) m = std::max(m, z.at2(ch, j * window + k));
            out.at2(ch, j) = m;
        }
    return out;
}

Tensor matvec(const Tensor& w, const Tensor& z) {
    if (w.ndim() != 2 || z.ndim() != 1 || w.dim(1) != z.dim(0))
        throw std::invalid_argument("matvec: shape mismatch");
    const int m = w.dim(0), n = w.dim(1);
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += w.at2(i, j) * z[j];
        out[i] = acc;
    }
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    double acc = 0.0;
    for (int i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = a;
    for (int i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (int i = 0; i < out.size(); ++i) out[i] *= c;
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw std::invalid_argument("hadamard: size mismatch");
    Tensor out = a;
    for (int i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

}  // namespace galu
