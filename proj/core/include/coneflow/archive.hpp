#pragma once

#include "coneflow/flow.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace coneflow::archive {

inline constexpr std::string_view kMagic = "CKRF1";
inline constexpr std::uint8_t kVersion = 1;

struct SurfaceDescriptor {
    grid::SurfaceKind kind{grid::SurfaceKind::Torus};
    std::int32_t resolution{0};
    double volume{0.0};

    bool operator==(const SurfaceDescriptor&) const = default;
};

SurfaceDescriptor describe(const grid::ModelSurface& s);

// A named payload: either little-endian float64 values or UTF-8 text.
struct Frame {
    std::string name;
    std::vector<double> values;
    std::optional<std::string> text;
};

struct CkrfFile {
    SurfaceDescriptor surface;
    std::vector<Frame> frames;

    void add(std::string name, std::span<const double> values);
    void add_text(std::string name, std::string text);
    const Frame& get(std::string_view name) const;
    const Frame* find(std::string_view name) const;

    std::string encode() const;
    static CkrfFile decode(std::string_view bytes);
};

std::string encode_trajectory(const grid::ModelSurface& s, const flow::Trajectory& traj);
flow::Trajectory decode_trajectory(std::string_view bytes, const grid::ModelSurface& expected);

std::string encode_pack(const background::BackgroundPack& pack);

inline constexpr std::string_view kSeriesHeader = "t,sup_phi,inf_phi,osc_phi,sup_phidot,inf_phidot,min_ratio,max_ratio";

std::string series_csv(const flow::Trajectory& traj);
// One row per node: index, row, col, coordinates, reduced and unreduced potential, time derivative, divisor flag.
std::string snapshot_csv(const background::BackgroundPack& pack, const flow::Trajectory& traj, double t);

std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

struct RunRecord {
    std::string id;
    std::string status;  // "ok" or "failed"
    double epsilon{0.0};
    int j{0};
    bool companion{false};
    std::string note;
};

struct FileRecord {
    std::string path;  // relative to the archive root, '/' separated
    std::string sha256;
};

struct Manifest {
    std::string created;  // the only time-dependent field
    std::string status;   // "incomplete", "complete" or "failed"
    std::vector<RunRecord> runs;
    std::vector<FileRecord> files;

    std::string to_text() const;
    static Manifest parse(std::string_view text);
};

inline constexpr std::string_view kManifestName = "manifest.txt";

// Reads the manifest and checks every recorded hash; throws RuntimeFailure on any mismatch or an unfinished run.
Manifest load_verified(const std::filesystem::path& root);

// Hashes `relative` under `root` and inserts or replaces its record.
void record_file(Manifest& m, const std::filesystem::path& root, const std::string& relative);

}  // namespace coneflow::archive
