#ifndef UNINET_TENSOR_HPP
#define UNINET_TENSOR_HPP

#include <cstdint>
#include <vector>

namespace uninet {

// Dense row-major tensor of doubles. Feature maps use HWC layout
// (shape {h, w, c}); convolution weights use {oc, kh, kw, ic}.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, double fill);

    static Tensor scalar(double v);

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // HWC accessors for 3-d tensors
    int h() const { return shape_[0]; }
    int w() const { return shape_[1]; }
    int c() const { return shape_[2]; }
    int64_t idx3(int y, int x, int ch) const {
        return (static_cast<int64_t>(y) * shape_[1] + x) * shape_[2] + ch;
    }
    double& at3(int y, int x, int ch) { return data_[static_cast<size_t>(idx3(y, x, ch))]; }
    double at3(int y, int x, int ch) const { return data_[static_cast<size_t>(idx3(y, x, ch))]; }

    void fill(double v);
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

double max_abs(const Tensor& t);
double sum(const Tensor& t);

}  // namespace uninet

#endif
