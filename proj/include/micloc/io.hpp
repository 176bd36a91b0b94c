#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "micloc/csm.hpp"
#include "micloc/damas.hpp"
#include "micloc/geometry.hpp"

namespace micloc {

// CSM files. First line is a JSON header
//   {"format":"micloc-csm","version":1,"m":M,"frequency_hz":f,"encoding":"hex"}
// followed by a line of hex-encoded little-endian IEEE-754 doubles
// (re, im) for the M*M entries in row-major order. With encoding "json" the
// file is a single JSON object carrying "entries": [[re, im], ...] instead.
enum class CsmEncoding { hex, json };

void write_csm(std::ostream& out, const SpectralMatrix& csm, CsmEncoding encoding = CsmEncoding::hex);
SpectralMatrix read_csm(std::istream& in);
void save_csm(const std::filesystem::path& path, const SpectralMatrix& csm, CsmEncoding encoding = CsmEncoding::hex);
SpectralMatrix load_csm(const std::filesystem::path& path);

// Map CSV: header "index,x_m,y_m,value", one row per grid point in index
// order, values printed with round-trip precision.
void save_map_csv(const std::filesystem::path& path, const ScanGrid& grid, std::span<const double> values);
std::vector<double> load_map_csv(const std::filesystem::path& path);

// 8-bit binary PGM, one pixel per grid point (largest y at the top). Pixel value
// is round(255 (v - min) / (max - min)); min and max go into the comment
// line "# micloc min=<min> max=<max>". A constant map renders all zero.
void save_map_pgm(const std::filesystem::path& path, const ScanGrid& grid, std::span<const double> values);

// Propagation matrix cache: magic "MLPM", u32 version, u64 S, f64 f,
// f64 c0, u64 array fingerprint, f64 z0, f64 alpha, then S*S row-major
// doubles.
struct PropagationFileInfo {
    double c0 = 0.0;
    std::uint64_t array_fingerprint = 0;
    double z0 = 0.0, alpha = 0.0;
};

void save_propagation_matrix(const std::filesystem::path& path, const PropagationMatrix& a,
                             const PropagationFileInfo& info = {});
PropagationMatrix load_propagation_matrix(const std::filesystem::path& path, PropagationFileInfo* info = nullptr);

} // namespace micloc
