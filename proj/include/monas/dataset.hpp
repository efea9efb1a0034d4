#pragma once

// Desk-scale datasets: a deterministic synthetic image-classification
// generator, the IDX binary reader/writer, and stratified splitting.
//
// The synthetic task is class-by-orientation: each class renders a sinusoidal
// grating at a class-specific orientation with random phase, amplitude jitter
// and pixel noise. Random phase makes the class mean image uninformative, so
// a linear model on raw pixels stays near chance while a small CNN can
// recover the orientation. Pixels are quantized to the 8-bit grid at
// generation time, which keeps IDX round trips value-exact.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "monas/error.hpp"
#include "monas/rng.hpp"
#include "monas/tensor.hpp"

namespace monas {

struct Dataset {
    Tensor images;  // (N, 1, H, W), values in [0, 1]
    std::vector<int> labels;
    int num_classes = 0;
    std::string name;
    std::string source;  // "seed:<n>" or the file paths

    int size() const { return images.empty() ? 0 : images.dim(0); }

    /// Copy examples `indices` into a new dataset (order preserved).
    Dataset subset(const std::vector<int>& indices, const std::string& suffix) const {
        Dataset out;
        const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
        out.images = Tensor({static_cast<int>(indices.size()), c, h, w});
        const std::size_t stride = static_cast<std::size_t>(c) * h * w;
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const double* src = images.data() + static_cast<std::size_t>(indices[i]) * stride;
            std::copy(src, src + stride, out.images.data() + i * stride);
            out.labels.push_back(labels[indices[i]]);
        }
        out.num_classes = num_classes;
        out.name = name + suffix;
        out.source = source;
        return out;
    }
};

/// Deterministic class-conditional pattern generator. Classes are balanced
/// (label of example i is i mod num_classes); each example's pattern draws
/// from a stream derived from (seed, example index) only.
inline Dataset gen_synthetic(int num_examples, int num_classes, int image_size,
                             std::uint64_t seed) {
    if (image_size < 8) throw Error("bad_config", "image_size must be >= 8");
    if (num_classes < 2) throw Error("bad_config", "num_classes must be >= 2");

    Dataset ds;
    ds.images = Tensor({num_examples, 1, image_size, image_size});
    ds.labels.resize(num_examples);
    ds.num_classes = num_classes;
    ds.name = "synthetic";
    ds.source = "seed:" + std::to_string(seed);

    const double pi = 3.14159265358979323846;
    const double frequency = 2.5;  // grating cycles across the image
    for (int i = 0; i < num_examples; ++i) {
        const int label = i % num_classes;
        ds.labels[i] = label;
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i), 0xda7a));
        const double theta = pi * label / num_classes;
        const double cx = std::cos(theta), sy = std::sin(theta);
        const double phase = rng.uniform(0.0, 2.0 * pi);
        const double amplitude = rng.uniform(0.30, 0.45);
        double* img = ds.images.data() + static_cast<std::size_t>(i) * image_size * image_size;
        for (int y = 0; y < image_size; ++y)
            for (int x = 0; x < image_size; ++x) {
                const double u = (x * cx + y * sy) / image_size;
                double v = 0.5 + amplitude * std::sin(2.0 * pi * frequency * u + phase);
                v += rng.normal(0.0, 0.06);
                v = std::clamp(v, 0.0, 1.0);
                img[y * image_size + x] = std::round(v * 255.0) / 255.0;
            }
    }
    return ds;
}

/// Secondary label set over the same inputs: fine classes collapsed into
/// `groups` coarse classes (fine label g*K/groups..(g+1)*K/groups-1 -> g).
inline int coarse_label(int fine, int num_classes, int groups) {
    return fine * groups / num_classes;
}

// ---------------------------------------------------------------------------
// IDX binary format
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& what) {
    std::uint8_t b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw Error("truncated", "unexpected end of file reading " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24),
                               static_cast<std::uint8_t>(v >> 16),
                               static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parse an IDX image/label pair. Bytes scale to [0,1] (255 -> 1.0).
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw Error("io", "cannot open '" + images_path + "'");
    if (detail::read_be32(img, "image magic") != kIdxImageMagic)
        throw Error("bad_magic", "'" + images_path + "' is not an IDX3 image file");
    const std::uint32_t n = detail::read_be32(img, "image count");
    const std::uint32_t h = detail::read_be32(img, "image height");
    const std::uint32_t w = detail::read_be32(img, "image width");

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw Error("io", "cannot open '" + labels_path + "'");
    if (detail::read_be32(lab, "label magic") != kIdxLabelMagic)
        throw Error("bad_magic", "'" + labels_path + "' is not an IDX1 label file");
    const std::uint32_t ln = detail::read_be32(lab, "label count");
    if (ln != n)
        throw Error("count_mismatch", std::to_string(n) + " images vs " + std::to_string(ln) +
                                          " labels");

    Dataset ds;
    ds.images = Tensor({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
    ds.labels.resize(n);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(h) * w);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!img.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size())))
            throw Error("truncated", "image payload ends at example " + std::to_string(i));
        double* dst = ds.images.data() + static_cast<std::size_t>(i) * row.size();
        for (std::size_t p = 0; p < row.size(); ++p) dst[p] = row[p] / 255.0;
    }
    int max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        std::uint8_t b;
        if (!lab.read(reinterpret_cast<char*>(&b), 1))
            throw Error("truncated", "label payload ends at example " + std::to_string(i));
        ds.labels[i] = b;
        max_label = std::max(max_label, static_cast<int>(b));
    }
    ds.num_classes = max_label + 1;
    ds.name = "idx";
    ds.source = images_path + ";" + labels_path;
    return ds;
}

/// Inverse of load_idx; pixel p writes round(p*255).
inline void write_idx(const Dataset& ds, const std::string& images_path,
                      const std::string& labels_path) {
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw Error("io", "cannot open '" + images_path + "' for writing");
    const int n = ds.size(), h = ds.images.dim(2), w = ds.images.dim(3);
    detail::write_be32(img, kIdxImageMagic);
    detail::write_be32(img, static_cast<std::uint32_t>(n));
    detail::write_be32(img, static_cast<std::uint32_t>(h));
    detail::write_be32(img, static_cast<std::uint32_t>(w));
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * h * w; ++i) {
        const auto byte = static_cast<std::uint8_t>(std::lround(ds.images[i] * 255.0));
        img.write(reinterpret_cast<const char*>(&byte), 1);
    }
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw Error("io", "cannot open '" + labels_path + "' for writing");
    detail::write_be32(lab, kIdxLabelMagic);
    detail::write_be32(lab, static_cast<std::uint32_t>(n));
    for (int l : ds.labels) {
        const auto byte = static_cast<std::uint8_t>(l);
        lab.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct SplitResult {
    Dataset train;
    Dataset val;
};

/// Stratified split: per class, a seeded shuffle selects round(fraction * n_c)
/// validation examples. Subsets keep ascending original order, so the union
/// is the original multiset.
inline SplitResult split(const Dataset& ds, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw Error("bad_config", "val_fraction must lie in (0, 1)");
    std::vector<std::vector<int>> by_class(ds.num_classes);
    for (int i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

    std::vector<int> train_idx, val_idx;
    Rng rng(derive_seed(seed, 0x5117));
    for (auto& indices : by_class) {
        // Fisher-Yates with the seeded stream.
        for (std::size_t i = indices.size(); i > 1; --i)
            std::swap(indices[i - 1], indices[rng.uniform_int(i)]);
        const auto take = static_cast<std::size_t>(
            std::lround(val_fraction * static_cast<double>(indices.size())));
        for (std::size_t i = 0; i < indices.size(); ++i)
            (i < take ? val_idx : train_idx).push_back(indices[i]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    return {ds.subset(train_idx, ":train"), ds.subset(val_idx, ":val")};
}

}  // namespace monas
