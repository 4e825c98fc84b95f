#pragma once

#include <filesystem>
#include <string>

#include "dyntomo/tomo.hpp"
#include "dyntomo/types.hpp"

namespace dyntomo::io {

/// Dataset directory layout: meta.json plus one little-endian float32 binary
/// per frame (row-major, y-outer). Vector fields store both component planes
/// in one file (all x, then all y).

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MalformedHeaderError : IoError {
    using IoError::IoError;
};
struct UnsupportedVersionError : IoError {
    using IoError::IoError;
};
struct PayloadSizeError : IoError {
    using IoError::IoError;
};

inline constexpr int kFormatVersion = 1;

void write_dataset(const std::filesystem::path& dir, const ImageSeries& series,
                   const std::string& notes = "");
void write_dataset(const std::filesystem::path& dir, const VectorFieldSeries& series,
                   const std::string& notes = "");
void write_dataset(const std::filesystem::path& dir, const tomo::GatedDataset& ds);

/// Kind tag stored in meta.json; callers dispatch on it.
std::string dataset_kind(const std::filesystem::path& dir);

ImageSeries read_image_series(const std::filesystem::path& dir);
VectorFieldSeries read_vector_field_series(const std::filesystem::path& dir);
tomo::GatedDataset read_gated_dataset(const std::filesystem::path& dir);

/// 16-bit PGM (P5, big-endian samples) with the affine window recorded in a
/// JSON sidecar (<name>.json).
void write_pgm16(const std::filesystem::path& file, const Image2D& img,
                 double window_lo, double window_hi);
void write_pgm16_auto(const std::filesystem::path& file, const Image2D& img);

}  // namespace dyntomo::io
