#include "uninet/maskcodec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "uninet/errors.hpp"

namespace uninet::maskcodec {

namespace {

// cyclic Jacobi eigendecomposition of a symmetric matrix; deterministic
// rotation order. A is overwritten; eigenvectors land in the columns of V.
void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& v) {
    v.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;
    auto A = [&](int r, int c) -> double& { return a[static_cast<size_t>(r) * n + c]; };
    auto V = [&](int r, int c) -> double& { return v[static_cast<size_t>(r) * n + c]; };

    double diag_norm = 0.0;
    for (int i = 0; i < n; ++i) diag_norm += A(i, i) * A(i, i);
    const double tol = 1e-14 * std::max(1.0, std::sqrt(diag_norm));

    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
        if (std::sqrt(off) < tol) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (std::fabs(apq) < 1e-300) continue;
                const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < n; ++i) {
                    const double aip = A(i, p), aiq = A(i, q);
                    A(i, p) = c * aip - s * aiq;
                    A(i, q) = s * aip + c * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = A(p, i), aqi = A(q, i);
                    A(p, i) = c * api - s * aqi;
                    A(q, i) = s * api + c * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = V(i, p), viq = V(i, q);
                    V(i, p) = c * vip - s * viq;
                    V(i, q) = s * vip + c * viq;
                }
            }
        }
    }
}

struct Lerp {
    int i0, i1;
    double w0, w1;
};

std::vector<Lerp> lerp_axis(int out_n, int in_n) {
    std::vector<Lerp> v(static_cast<size_t>(out_n));
    const double scale = static_cast<double>(in_n) / out_n;
    for (int o = 0; o < out_n; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, in_n - 1);
        const double t = src - i0;
        v[static_cast<size_t>(o)] = {i0, i1, 1.0 - t, t};
    }
    return v;
}

}  // namespace

std::vector<double> rasterize_to_grid(const std::vector<uint8_t>& mask, int h, int w,
                                      const std::array<double, 4>& box, int mask_side) {
    const int x0 = std::clamp(static_cast<int>(std::floor(box[0])), 0, w - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(box[1])), 0, h - 1);
    const int x1 = std::clamp(static_cast<int>(std::ceil(box[2])), x0 + 1, w);
    const int y1 = std::clamp(static_cast<int>(std::ceil(box[3])), y0 + 1, h);
    const int cw = x1 - x0, ch = y1 - y0;

    bool any = false;
    for (int y = y0; y < y1 && !any; ++y)
        for (int x = x0; x < x1; ++x)
            if (mask[static_cast<size_t>(y) * w + x]) {
                any = true;
                break;
            }
    if (!any) throw std::invalid_argument("maskcodec: empty mask crop");

    const int m = mask_side;
    std::vector<double> grid(static_cast<size_t>(m) * m, 0.0);
    for (int i = 0; i < m; ++i) {
        const int sy = y0 + std::min(ch - 1, static_cast<int>((i + 0.5) * ch / m));
        for (int j = 0; j < m; ++j) {
            const int sx = x0 + std::min(cw - 1, static_cast<int>((j + 0.5) * cw / m));
            grid[static_cast<size_t>(i) * m + j] = mask[static_cast<size_t>(sy) * w + sx] ? 1.0 : 0.0;
        }
    }
    return grid;
}

PcaBasis fit_pca(const std::vector<MaskExample>& masks, int mask_side, int code_dim) {
    const int n = static_cast<int>(masks.size());
    const int d = mask_side * mask_side;
    if (code_dim < 1) throw std::invalid_argument("fit_pca: code_dim must be >= 1");
    if (code_dim > d) throw std::invalid_argument("fit_pca: code_dim exceeds grid size");
    if (n < code_dim)
        throw std::invalid_argument("fit_pca: need at least code_dim training masks, got " +
                                    std::to_string(n));

    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<size_t>(n));
    for (const auto& ex : masks)
        rows.push_back(rasterize_to_grid(*ex.mask, ex.h, ex.w, ex.box, mask_side));

    PcaBasis basis;
    basis.mask_side = mask_side;
    basis.code_dim = code_dim;
    basis.format_version = kBasisVersion;
    basis.mean.assign(static_cast<size_t>(d), 0.0);
    for (const auto& r : rows)
        for (int i = 0; i < d; ++i) basis.mean[static_cast<size_t>(i)] += r[static_cast<size_t>(i)];
    for (auto& v : basis.mean) v /= n;

    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    std::vector<double> centered(static_cast<size_t>(d));
    for (const auto& r : rows) {
        for (int i = 0; i < d; ++i)
            centered[static_cast<size_t>(i)] = r[static_cast<size_t>(i)] - basis.mean[static_cast<size_t>(i)];
        for (int i = 0; i < d; ++i) {
            const double ci = centered[static_cast<size_t>(i)];
            if (ci == 0.0) continue;
            double* crow = cov.data() + static_cast<size_t>(i) * d;
            for (int j = i; j < d; ++j) crow[j] += ci * centered[static_cast<size_t>(j)];
        }
    }
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            const double v = cov[static_cast<size_t>(i) * d + j] / n;
            cov[static_cast<size_t>(i) * d + j] = v;
            cov[static_cast<size_t>(j) * d + i] = v;
        }

    std::vector<double> vecs;
    jacobi_eigen(cov, d, vecs);

    std::vector<int> idx(static_cast<size_t>(d));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return cov[static_cast<size_t>(a) * d + a] > cov[static_cast<size_t>(b) * d + b];
    });

    basis.components.assign(static_cast<size_t>(code_dim) * d, 0.0);
    basis.explained_variance.assign(static_cast<size_t>(code_dim), 0.0);
    for (int r = 0; r < code_dim; ++r) {
        const int col = idx[static_cast<size_t>(r)];
        basis.explained_variance[static_cast<size_t>(r)] =
            std::max(0.0, cov[static_cast<size_t>(col) * d + col]);
        double* out = basis.components.data() + static_cast<size_t>(r) * d;
        for (int i = 0; i < d; ++i) out[i] = vecs[static_cast<size_t>(i) * d + col];
        // sign convention: first non-negligible coefficient positive
        for (int i = 0; i < d; ++i) {
            if (std::fabs(out[i]) > 1e-12) {
                if (out[i] < 0)
                    for (int j = 0; j < d; ++j) out[j] = -out[j];
                break;
            }
        }
    }
    return basis;
}

std::vector<double> encode_grid(const std::vector<double>& grid, const PcaBasis& basis) {
    const int d = basis.grid_size();
    if (grid.size() != static_cast<size_t>(d)) throw std::invalid_argument("encode_grid: size mismatch");
    std::vector<double> code(static_cast<size_t>(basis.code_dim), 0.0);
    for (int r = 0; r < basis.code_dim; ++r) {
        const double* comp = basis.components.data() + static_cast<size_t>(r) * d;
        double acc = 0.0;
        for (int i = 0; i < d; ++i)
            acc += comp[i] * (grid[static_cast<size_t>(i)] - basis.mean[static_cast<size_t>(i)]);
        code[static_cast<size_t>(r)] = acc;
    }
    return code;
}

std::vector<double> decode_grid(const std::vector<double>& code, const PcaBasis& basis) {
    const int d = basis.grid_size();
    if (code.size() != static_cast<size_t>(basis.code_dim))
        throw std::invalid_argument("decode_grid: code size mismatch");
    std::vector<double> grid(basis.mean.begin(), basis.mean.end());
    for (int r = 0; r < basis.code_dim; ++r) {
        const double cr = code[static_cast<size_t>(r)];
        if (cr == 0.0) continue;
        const double* comp = basis.components.data() + static_cast<size_t>(r) * d;
        for (int i = 0; i < d; ++i) grid[static_cast<size_t>(i)] += cr * comp[i];
    }
    return grid;
}

std::vector<double> encode_mask(const std::vector<uint8_t>& mask, int h, int w,
                                const std::array<double, 4>& box, const PcaBasis& basis) {
    return encode_grid(rasterize_to_grid(mask, h, w, box, basis.mask_side), basis);
}

std::vector<uint8_t> decode_mask(const std::vector<double>& code, int box_h, int box_w,
                                 const PcaBasis& basis, double threshold) {
    for (double c : code)
        if (!std::isfinite(c)) throw std::invalid_argument("decode_mask: non-finite code");
    if (box_h < 1 || box_w < 1) throw std::invalid_argument("decode_mask: empty box");
    const std::vector<double> grid = decode_grid(code, basis);
    const int m = basis.mask_side;
    const auto ly = lerp_axis(box_h, m);
    const auto lx = lerp_axis(box_w, m);
    std::vector<uint8_t> out(static_cast<size_t>(box_h) * box_w, 0);
    for (int y = 0; y < box_h; ++y) {
        const Lerp& ay = ly[static_cast<size_t>(y)];
        for (int x = 0; x < box_w; ++x) {
            const Lerp& ax = lx[static_cast<size_t>(x)];
            const double v = ay.w0 * (ax.w0 * grid[static_cast<size_t>(ay.i0) * m + ax.i0] +
                                      ax.w1 * grid[static_cast<size_t>(ay.i0) * m + ax.i1]) +
                             ay.w1 * (ax.w0 * grid[static_cast<size_t>(ay.i1) * m + ax.i0] +
                                      ax.w1 * grid[static_cast<size_t>(ay.i1) * m + ax.i1]);
            out[static_cast<size_t>(y) * box_w + x] = v >= threshold ? 1 : 0;
        }
    }
    return out;
}

namespace {

void write_f32(std::ostream& out, const std::vector<double>& v) {
    std::vector<float> buf(v.size());
    for (size_t i = 0; i < v.size(); ++i) buf[i] = static_cast<float>(v[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

std::vector<double> read_f32(std::istream& in, size_t n, const char* what) {
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
    if (!in) throw FormatError(std::string("basis: truncated ") + what);
    return {buf.begin(), buf.end()};
}

}  // namespace

void save_basis(std::ostream& out, const PcaBasis& basis) {
    out.write("UPCA", 4);
    const uint32_t ver = static_cast<uint32_t>(basis.format_version);
    const uint32_t m = static_cast<uint32_t>(basis.mask_side);
    const uint32_t k = static_cast<uint32_t>(basis.code_dim);
    out.write(reinterpret_cast<const char*>(&ver), 4);
    out.write(reinterpret_cast<const char*>(&m), 4);
    out.write(reinterpret_cast<const char*>(&k), 4);
    write_f32(out, basis.mean);
    write_f32(out, basis.components);
    if (!out) throw IoError("basis: write failed");
}

PcaBasis load_basis(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "UPCA", 4) != 0) throw FormatError("basis: bad magic");
    uint32_t ver = 0, m = 0, k = 0;
    in.read(reinterpret_cast<char*>(&ver), 4);
    in.read(reinterpret_cast<char*>(&m), 4);
    in.read(reinterpret_cast<char*>(&k), 4);
    if (!in) throw FormatError("basis: truncated header");
    if (ver != static_cast<uint32_t>(kBasisVersion))
        throw FormatError("basis: unsupported version " + std::to_string(ver));
    if (m == 0 || m > 1024 || k == 0 || k > m * m) throw FormatError("basis: implausible dimensions");
    PcaBasis b;
    b.format_version = static_cast<int>(ver);
    b.mask_side = static_cast<int>(m);
    b.code_dim = static_cast<int>(k);
    b.mean = read_f32(in, static_cast<size_t>(m) * m, "mean");
    b.components = read_f32(in, static_cast<size_t>(k) * m * m, "components");
    return b;
}

void save_basis(const std::string& path, const PcaBasis& basis) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    save_basis(f, basis);
}

PcaBasis load_basis(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    return load_basis(f);
}

}  // namespace uninet::maskcodec
