#include "uninet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uninet {

namespace {
int64_t shape_size(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension");
        n *= d;
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_size(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_size(shape_)), fill) {}

Tensor Tensor::scalar(double v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::fabs(t[i]));
    return m;
}

double sum(const Tensor& t) {
    double s = 0.0;
    for (int64_t i = 0; i < t.size(); ++i) s += t[i];
    return s;
}

}  // namespace uninet
