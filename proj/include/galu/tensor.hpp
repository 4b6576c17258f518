#pragma once

#include <cstdint>
#include <vector>

namespace galu {

/// Dense row-major array of doubles. Tensors are plain values: copy freely,
/// never mutate one that another computation might still read.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<int> shape);
    static Tensor ones(std::vector<int> shape);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int size() const { return static_cast<int>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double operator[](int i) const { return data_[static_cast<size_t>(i)]; }
    double& operator[](int i) { return data_[static_cast<size_t>(i)]; }

    // 2-d / 3-d row-major accessors; caller guarantees ndim matches.
    double at2(int i, int j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double& at2(int i, int j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double at3(int i, int j, int k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    double& at3(int i, int j, int k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

/// Counter-based random stream: the n-th draw is a pure function of
/// (seed, stream_id, n), so sequences replay identically across runs and
/// platforms, and distinct stream_ids never share state.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
        : seed_(seed), stream_(stream_id) {}

    std::uint64_t next_u64();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);
    double gaussian();                      // N(0,1); consumes two uniforms
    double pm_sigma(double sigma);          // ±sigma with probability 1/2
    int uniform_int(int n);                 // [0, n)

    RngStream substream(std::uint64_t id) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

// Circular index arithmetic, 1-based at the API boundary: i in [1..d_in],
// shift r in [0..d_in-1]. Internal tensor storage stays 0-based.
int circ_add(int i, int r, int d_in);

Tensor rotate(const Tensor& x, int r);               // vector, shift r
Tensor rotate_channels(const Tensor& z, int r);      // [c,d]: rotate each channel's spatial axis

// z: [c_in, d_in], kernel: [w_cv, c_in, c_out] -> [c_out, d_in].
// out(co,p) = sum_{k,ci} kernel(k,ci,co) * z(ci, (p+k) mod d_in)
Tensor conv1d_circular(const Tensor& z, const Tensor& kernel);

Tensor global_average_pool(const Tensor& z);         // [c,d] -> [c]
Tensor max_pool_1d(const Tensor& z, int window);     // [c,d] -> [c, d/window]

Tensor matvec(const Tensor& w, const Tensor& z);     // [m,n] x [n] -> [m]
double dot(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor hadamard(const Tensor& a, const Tensor& b);

}  // namespace galu
