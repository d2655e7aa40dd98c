#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

#include "maskdeep/core/errors.hpp"

namespace maskdeep {

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

// Column-major view over a row-major [rows x cols] buffer: the map has shape
// [cols x rows] and equals the transpose. All GEMMs below are phrased on
// these transposed views.
template <typename S>
inline MatMap<S> tview(S* p, int rows, int cols) {
    return MatMap<S>(p, cols, rows);
}
template <typename S>
inline ConstMatMap<S> tview(const S* p, int rows, int cols) {
    return ConstMatMap<S>(p, cols, rows);
}

// Dense (n, c, h, w) activation tensor, contiguous, row-major.
template <typename S>
class Tensor4 {
  public:
    Tensor4() = default;
    Tensor4(int n, int c, int h, int w) { resize(n, c, h, w); }

    void resize(int n, int c, int h, int w) {
        n_ = n;
        c_ = c;
        h_ = h;
        w_ = w;
        data_.assign(static_cast<std::size_t>(n) * c * h * w, S(0));
    }

    void zero() { std::fill(data_.begin(), data_.end(), S(0)); }

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }

    S& at(int n, int c, int h, int w) { return data_[idx(n, c, h, w)]; }
    S at(int n, int c, int h, int w) const { return data_[idx(n, c, h, w)]; }

    S* plane(int n, int c) { return data_.data() + idx(n, c, 0, 0); }
    const S* plane(int n, int c) const { return data_.data() + idx(n, c, 0, 0); }

    S* image(int n) { return data_.data() + idx(n, 0, 0, 0); }
    const S* image(int n) const { return data_.data() + idx(n, 0, 0, 0); }

    bool same_shape(const Tensor4& o) const {
        return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
    }

    std::string shape_str() const {
        return "(" + std::to_string(n_) + "," + std::to_string(c_) + "," + std::to_string(h_) +
               "," + std::to_string(w_) + ")";
    }

    template <typename T>
    Tensor4<T> cast() const {
        Tensor4<T> out(n_, c_, h_, w_);
        for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<T>(data_[i]);
        return out;
    }

  private:
    std::size_t idx(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * c_ + c) * h_ + h) * w_ + w;
    }

    std::vector<S> data_;
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

// One named parameter tensor with its gradient buffer.
template <typename S>
struct Param {
    std::vector<S> v;
    std::vector<S> g;
    std::vector<int> shape;

    void init(std::vector<int> shp) {
        shape = std::move(shp);
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        v.assign(n, S(0));
        g.assign(n, S(0));
    }
    std::size_t size() const { return v.size(); }
    void zero_grad() { std::fill(g.begin(), g.end(), S(0)); }
};

// Non-trained state that still belongs in checkpoints and EMA (BN running
// statistics).
template <typename S>
struct Buffer {
    std::vector<S> v;
    void init(std::size_t n, S fill) { v.assign(n, fill); }
};

// Stable-ordered registry; registration order defines the checkpoint layout
// and the optimizer slot order.
template <typename S>
struct ParamRegistry {
    std::vector<std::pair<std::string, Param<S>*>> params;
    std::vector<std::pair<std::string, Buffer<S>*>> buffers;

    void add(const std::string& name, Param<S>* p) { params.emplace_back(name, p); }
    void add_buffer(const std::string& name, Buffer<S>* b) { buffers.emplace_back(name, b); }

    void absorb(const std::string& prefix, ParamRegistry& sub) {
        for (auto& [n, p] : sub.params) params.emplace_back(prefix + n, p);
        for (auto& [n, b] : sub.buffers) buffers.emplace_back(prefix + n, b);
    }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (auto& [name, p] : params) n += p->size();
        return n;
    }

    void zero_grad() {
        for (auto& [name, p] : params) p->zero_grad();
    }
};

template <typename S>
inline bool all_finite(const Tensor4<S>& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(static_cast<double>(t.data()[i]))) return false;
    return true;
}

}  // namespace maskdeep
