#ifndef UNINET_MASKCODEC_HPP
#define UNINET_MASKCODEC_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace uninet::maskcodec {

// PCA dictionary for instance-mask encoding. Masks are cropped to their box,
// resized to mask_side x mask_side with nearest-neighbor sampling, flattened,
// and projected onto the top-k principal components.
struct PcaBasis {
    int mask_side = 16;                 // m
    int code_dim = 32;                  // k
    std::vector<double> mean;           // m*m
    std::vector<double> components;     // k rows of length m*m, orthonormal
    std::vector<double> explained_variance;  // k, in-memory only (not persisted)
    int format_version = 1;

    int grid_size() const { return mask_side * mask_side; }
};

inline constexpr int kBasisVersion = 1;

struct MaskExample {
    const std::vector<uint8_t>* mask;  // full-image binary mask
    int h = 0, w = 0;
    std::array<double, 4> box{};       // pixel-edge box to crop to
};

PcaBasis fit_pca(const std::vector<MaskExample>& masks, int mask_side, int code_dim);

// crop mask to box, nearest-resize to m x m, flatten to {0,1}^{m^2}
std::vector<double> rasterize_to_grid(const std::vector<uint8_t>& mask, int h, int w,
                                      const std::array<double, 4>& box, int mask_side);

// linear map on already-rasterized m^2 grids
std::vector<double> encode_grid(const std::vector<double>& grid, const PcaBasis& basis);
std::vector<double> decode_grid(const std::vector<double>& code, const PcaBasis& basis);

std::vector<double> encode_mask(const std::vector<uint8_t>& mask, int h, int w,
                                const std::array<double, 4>& box, const PcaBasis& basis);

// reconstruct, bilinear-resize to (box_h x box_w), binarize at threshold
std::vector<uint8_t> decode_mask(const std::vector<double>& code, int box_h, int box_w,
                                 const PcaBasis& basis, double threshold = 0.5);

// file format: magic "UPCA", u32 version, u32 m, u32 k,
// then mean and components as 32-bit little-endian floats
void save_basis(const std::string& path, const PcaBasis& basis);
PcaBasis load_basis(const std::string& path);
void save_basis(std::ostream& out, const PcaBasis& basis);
PcaBasis load_basis(std::istream& in);

}  // namespace uninet::maskcodec

#endif
