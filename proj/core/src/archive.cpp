#include "coneflow/archive.hpp"

#include "coneflow/errors.hpp"
#include "format.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace coneflow::archive {

namespace fs = std::filesystem;

SurfaceDescriptor describe(const grid::ModelSurface& s) {
    return {s.kind(), std::int32_t(s.resolution()), s.total_volume()};
}

void CkrfFile::add(std::string name, std::span<const double> values) {
    frames.push_back({std::move(name), std::vector<double>(values.begin(), values.end()), std::nullopt});
}

void CkrfFile::add_text(std::string name, std::string text) {
    frames.push_back({std::move(name), {}, std::move(text)});
}

const Frame* CkrfFile::find(std::string_view name) const {
    for (const auto& f : frames)
        if (f.name == name) return &f;
    return nullptr;
}

const Frame& CkrfFile::get(std::string_view name) const {
    if (const Frame* f = find(name)) return *f;
    throw RuntimeFailure("checkpoint file lacks frame '" + std::string(name) + "'");
}

namespace {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    explicit Reader(std::string_view b) : bytes_(b) {}

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return std::uint8_t(bytes_[pos_++]);
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw RuntimeFailure("checkpoint file is truncated");
    }
    std::string_view bytes_;
    std::size_t pos_{0};
};

}  // namespace

std::string CkrfFile::encode() const {
    std::string out(kMagic);
    out.push_back(char(kVersion));
    out.push_back(char(surface.kind == grid::SurfaceKind::Torus ? 0 : 1));
    put_u32(out, std::uint32_t(surface.resolution));
    put_f64(out, surface.volume);
    put_u64(out, frames.size());
    for (const auto& f : frames) {
        out.push_back(f.text ? 'S' : 'F');
        put_u32(out, std::uint32_t(f.name.size()));
        out += f.name;
        if (f.text) {
            put_u64(out, f.text->size());
            out += *f.text;
        } else {
            put_u64(out, f.values.size());
            for (double v : f.values) put_f64(out, v);
        }
    }
    return out;
}

CkrfFile CkrfFile::decode(std::string_view bytes) {
    Reader r(bytes);
    if (r.take(kMagic.size()) != kMagic) throw RuntimeFailure("not a CKRF1 checkpoint file");
    if (const auto v = r.u8(); v != kVersion)
        throw RuntimeFailure("unsupported checkpoint version " + std::to_string(int(v)));
    CkrfFile f;
    const auto kind = r.u8();
    if (kind > 1) throw RuntimeFailure("unknown surface kind in checkpoint file");
    f.surface.kind = kind == 0 ? grid::SurfaceKind::Torus : grid::SurfaceKind::SphereP1;
    f.surface.resolution = std::int32_t(r.u32());
    f.surface.volume = r.f64();
    const auto count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto type = r.u8();
        Frame fr;
        fr.name = std::string(r.take(r.u32()));
        const auto n = r.u64();
        if (type == 'S') {
            fr.text = std::string(r.take(n));
        } else if (type == 'F') {
            fr.values.resize(n);
            for (auto& v : fr.values) v = r.f64();
        } else {
            throw RuntimeFailure("corrupt frame type in checkpoint file");
        }
        f.frames.push_back(std::move(fr));
    }
    if (!r.done()) throw RuntimeFailure("trailing bytes in checkpoint file");
    return f;
}

std::string encode_trajectory(const grid::ModelSurface& s, const flow::Trajectory& traj) {
    CkrfFile f;
    f.surface = describe(s);
    f.add_text("run_id", traj.run_id);
    f.add_text("termination", flow::to_string(traj.termination));
    f.add_text("note", traj.note);
    const double meta[] = {double(traj.j), traj.epsilon, double(traj.steps), double(traj.rejected)};
    f.add("meta", meta);
    f.add("initial_level", traj.initial_level);
    f.add("initial.phi", traj.initial.phi);
    f.add("initial.phi_dot", traj.initial.phi_dot);
    std::vector<double> times;
    for (const auto& snap : traj.snapshots) times.push_back(snap.t);
    f.add("times", times);
    for (std::size_t i = 0; i < traj.snapshots.size(); ++i) {
        f.add("phi." + std::to_string(i), traj.snapshots[i].phi);
        f.add("phi_dot." + std::to_string(i), traj.snapshots[i].phi_dot);
    }
    std::vector<double> series;
    for (const auto& r : traj.series)
        series.insert(series.end(), {r.t, r.sup_phi, r.inf_phi, r.osc_phi, r.sup_phidot, r.inf_phidot, r.min_ratio,
                                     r.max_ratio});
    f.add("series", series);
    return f.encode();
}

flow::Trajectory decode_trajectory(std::string_view bytes, const grid::ModelSurface& expected) {
    const CkrfFile f = CkrfFile::decode(bytes);
    if (!(f.surface == describe(expected))) throw RuntimeFailure("checkpoint file was written for a different surface");
    flow::Trajectory t;
    t.run_id = *f.get("run_id").text;
    t.termination = flow::termination_from_string(*f.get("termination").text);
    t.note = *f.get("note").text;
    const auto& meta = f.get("meta").values;
    if (meta.size() != 4) throw RuntimeFailure("corrupt trajectory metadata");
    t.j = int(meta[0]);
    t.epsilon = meta[1];
    t.steps = std::int64_t(meta[2]);
    t.rejected = std::int64_t(meta[3]);
    t.initial_level = f.get("initial_level").values;
    t.initial = {0.0, f.get("initial.phi").values, f.get("initial.phi_dot").values};
    const auto& times = f.get("times").values;
    for (std::size_t i = 0; i < times.size(); ++i)
        t.snapshots.push_back(
            {times[i], f.get("phi." + std::to_string(i)).values, f.get("phi_dot." + std::to_string(i)).values});
    const auto& series = f.get("series").values;
    if (series.size() % 8 != 0) throw RuntimeFailure("corrupt series frame");
    for (std::size_t i = 0; i < series.size(); i += 8)
        t.series.push_back({series[i], series[i + 1], series[i + 2], series[i + 3], series[i + 4], series[i + 5],
                            series[i + 6], series[i + 7]});
    return t;
}

std::string encode_pack(const background::BackgroundPack& pack) {
    CkrfFile f;
    f.surface = describe(*pack.surface);
    const auto& p = pack.params;
    const double meta[] = {p.gamma, p.epsilon, p.k, p.T, p.eta_degree, pack.tmax, pack.slope, pack.equivalence_constant,
                           pack.chi_sup, pack.F_sup_abs};
    f.add("meta", meta);
    std::vector<double> nodes(pack.divisor.nodes.begin(), pack.divisor.nodes.end());
    f.add("divisor_nodes", nodes);
    f.add("s_h_sq", pack.divisor.s_h_sq);
    f.add("omega", pack.omega);
    f.add("theta", pack.theta);
    f.add("eta", pack.eta);
    f.add("h_gamma", pack.h_gamma);
    f.add("nu_gamma", pack.nu_gamma);
    f.add("chi", pack.chi);
    f.add("ddc_chi", pack.ddc_chi);
    f.add("omega_cone_eps", pack.omega_cone_eps);
    f.add("F_eps", pack.F_eps);
    f.add("cone_log", pack.cone_log);
    return f.encode();
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string series_csv(const flow::Trajectory& traj) {
    std::string out(kSeriesHeader);
    out += "\n";
    for (const auto& r : traj.series) {
        out += num(r.t) + "," + num(r.sup_phi) + "," + num(r.inf_phi) + "," + num(r.osc_phi) + "," + num(r.sup_phidot) +
               "," + num(r.inf_phidot) + "," + num(r.min_ratio) + "," + num(r.max_ratio) + "\n";
    }
    return out;
}

std::string snapshot_csv(const background::BackgroundPack& pack, const flow::Trajectory& traj, double t) {
    const flow::Snapshot* snap = t == 0.0 ? &traj.initial : nullptr;
    for (const auto& s : traj.snapshots)
        if (std::abs(s.t - t) <= 1e-12 * std::max(1.0, t)) snap = &s;
    if (!snap) throw ConfigError("run " + traj.run_id + " has no checkpoint at t = " + format_double(t));
    const auto& s = *pack.surface;
    const auto varphi = flow::unreduced_potential(pack, snap->phi);
    std::string out = "node,row,col,coord_a,coord_b,phi,varphi,phi_dot,divisor\n";
    for (std::size_t p = 0; p < s.size(); ++p) {
        const auto c = s.coords(p);
        const bool on_divisor =
            std::find(pack.divisor.nodes.begin(), pack.divisor.nodes.end(), p) != pack.divisor.nodes.end();
        out += std::to_string(p) + "," + std::to_string(p / std::size_t(s.cols())) + "," +
               std::to_string(p % std::size_t(s.cols())) + "," + num(c[0]) + "," + num(c[1]) + "," + num(snap->phi[p]) +
               "," + num(varphi[p]) + "," + num(snap->phi_dot[p]) + "," + (on_divisor ? "1" : "0") + "\n";
    }
    return out;
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw RuntimeFailure("SHA-256 computation failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot read '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw RuntimeFailure("cannot write '" + path.string() + "'");
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) throw RuntimeFailure("short write to '" + path.string() + "'");
    }
    fs::rename(tmp, path);
}

namespace {

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

}  // namespace

std::string Manifest::to_text() const {
    std::string out = "# coneflow archive manifest\n";
    out += "created " + created + "\n";
    out += "status " + status + "\n";
    for (const auto& r : runs) {
        out += "run " + r.id + " " + r.status + " " + num(r.epsilon) + " " + std::to_string(r.j) + " " +
               (r.companion ? "1" : "0") + " " + one_line(r.note) + "\n";
    }
    for (const auto& f : files) out += "file " + f.sha256 + " " + f.path + "\n";
    return out;
}

Manifest Manifest::parse(std::string_view text) {
    Manifest m;
    std::istringstream in{std::string(text)};
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            header = true;
            continue;
        }
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "created") {
            std::getline(ls >> std::ws, m.created);
        } else if (tag == "status") {
            ls >> m.status;
        } else if (tag == "run") {
            RunRecord r;
            int comp = 0;
            ls >> r.id >> r.status >> r.epsilon >> r.j >> comp;
            if (!ls) throw RuntimeFailure("corrupt manifest run line: " + line);
            r.companion = comp != 0;
            std::getline(ls >> std::ws, r.note);
            m.runs.push_back(std::move(r));
        } else if (tag == "file") {
            FileRecord f;
            ls >> f.sha256;
            std::getline(ls >> std::ws, f.path);
            if (f.sha256.size() != 64 || f.path.empty()) throw RuntimeFailure("corrupt manifest file line: " + line);
            m.files.push_back(std::move(f));
        } else {
            throw RuntimeFailure("corrupt manifest line: " + line);
        }
    }
    if (!header || m.status.empty()) throw RuntimeFailure("manifest header is missing");
    return m;
}

Manifest load_verified(const fs::path& root) {
    const fs::path mp = root / kManifestName;
    if (!fs::exists(mp)) throw RuntimeFailure("no manifest in archive '" + root.string() + "'");
    Manifest m = Manifest::parse(read_file(mp));
    if (m.status == "incomplete")
        throw RuntimeFailure("archive '" + root.string() + "' is incomplete (interrupted run?)");
    for (const auto& f : m.files) {
        const fs::path p = root / fs::path(f.path);
        if (!fs::exists(p)) throw RuntimeFailure("archive file missing: " + f.path);
        if (sha256_hex(read_file(p)) != f.sha256) throw RuntimeFailure("hash mismatch for archive file " + f.path);
    }
    return m;
}

void record_file(Manifest& m, const fs::path& root, const std::string& relative) {
    const std::string hash = sha256_hex(read_file(root / fs::path(relative)));
    for (auto& f : m.files) {
        if (f.path == relative) {
            f.sha256 = hash;
            return;
        }
    }
    m.files.push_back({relative, hash});
    std::sort(m.files.begin(), m.files.end(), [](const FileRecord& a, const FileRecord& b) { return a.path < b.path; });
}

}  // namespace coneflow::archive
