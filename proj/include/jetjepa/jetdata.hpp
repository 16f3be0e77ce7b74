// Jet data model: particles, per-particle features, dataset I/O (csv and a
// binary record stream), a synthetic prong-class generator, and the physics
// augmentations (rotation, smearing, longitudinal boost).
#pragma once

#include <array>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "jetjepa/common.hpp"
#include "jetjepa/rng.hpp"

namespace jetjepa {

struct RawParticle {
    double pt = 0.0;     // GeV, > 0
    double eta = 0.0;
    double phi = 0.0;    // wrapped to (-pi, pi]
    double energy = 0.0; // GeV, > 0
    double mass = 0.0;   // GeV, >= 0

    double px() const { return pt * std::cos(phi); }
    double py() const { return pt * std::sin(phi); }
    double pz() const { return pt * std::sinh(eta); }
    double p2() const { return pt * pt + pz() * pz(); }
};

struct FourVector {
    double e = 0.0, px = 0.0, py = 0.0, pz = 0.0;

    double pt() const { return std::sqrt(px * px + py * py); }
    double p2() const { return px * px + py * py + pz * pz; }
    double phi() const { return std::atan2(py, px); }
    double eta() const {
        const double t = pt();
        return t > 0.0 ? std::asinh(pz / t) : (pz >= 0.0 ? 1e9 : -1e9);
    }
    double mass2() const { return e * e - p2(); }

    FourVector& operator+=(const FourVector& o) {
        e += o.e;
        px += o.px;
        py += o.py;
        pz += o.pz;
        return *this;
    }
};

inline FourVector four_vector(const RawParticle& p) {
    return {p.energy, p.px(), p.py(), p.pz()};
}

struct JetSummary {
    double jet_pt = 0.0;
    double jet_energy = 0.0;
    double axis_eta = 0.0;
    double axis_phi = 0.0;
};

struct JetRecord {
    std::vector<RawParticle> particles; // order carries no meaning
    double jet_pt = 0.0;
    double jet_energy = 0.0;
    double axis_eta = 0.0;
    double axis_phi = 0.0;
    std::optional<int> label;
};

// The eight per-particle inputs, in fixed column order.
struct FeatureVector {
    double eta, phi, mass, ln_pt, ln_e, ln_pt_rel, ln_e_rel, delta_r_jet;

    static constexpr int kDim = 8;

    double operator[](int i) const {
        switch (i) {
            case 0: return eta;
            case 1: return phi;
            case 2: return mass;
            case 3: return ln_pt;
            case 4: return ln_e;
            case 5: return ln_pt_rel;
            case 6: return ln_e_rel;
            default: return delta_r_jet;
        }
    }
};

inline void validate_particle(const RawParticle& p, const std::string& where) {
    require(p.pt > 0.0, where + ": non-physical particle (pt <= 0)");
    require(p.energy > 0.0, where + ": non-physical particle (energy <= 0)");
    require(p.mass >= 0.0, where + ": non-physical particle (mass < 0)");
    require(std::isfinite(p.pt) && std::isfinite(p.eta) && std::isfinite(p.phi) &&
                std::isfinite(p.energy) && std::isfinite(p.mass),
            where + ": non-finite particle field");
    // On-shell consistency: E^2 >= pt^2 cosh^2(eta) up to rounding.
    const double pmin = p.pt * std::cosh(p.eta);
    require(p.energy * p.energy >= pmin * pmin * (1.0 - 1e-6),
            where + ": energy below momentum (off-shell)");
}

inline JetSummary jet_summary(const std::vector<RawParticle>& particles) {
    require(!particles.empty(), "empty jet");
    FourVector sum;
    for (const auto& p : particles) sum += four_vector(p);
    JetSummary s;
    s.jet_pt = sum.pt();
    s.jet_energy = sum.e;
    s.axis_eta = s.jet_pt > 0.0 ? sum.eta() : 0.0;
    s.axis_phi = s.jet_pt > 0.0 ? sum.phi() : 0.0;
    return s;
}

inline JetRecord make_jet(std::vector<RawParticle> particles, std::optional<int> label = std::nullopt) {
    JetRecord jet;
    jet.particles = std::move(particles);
    const JetSummary s = jet_summary(jet.particles);
    jet.jet_pt = s.jet_pt;
    jet.jet_energy = s.jet_energy;
    jet.axis_eta = s.axis_eta;
    jet.axis_phi = s.axis_phi;
    jet.label = label;
    return jet;
}

inline std::vector<FeatureVector> derive_features(const JetRecord& jet) {
    require(!jet.particles.empty(), "empty jet");
    require(jet.jet_pt > 0.0 && jet.jet_energy > 0.0, "derive_features: jet_pt and jet_energy must be positive");
    std::vector<FeatureVector> out;
    out.reserve(jet.particles.size());
    for (const auto& p : jet.particles) {
        require(p.pt > 0.0 && p.energy > 0.0, "non-physical particle");
        FeatureVector f{};
        f.eta = p.eta;
        f.phi = p.phi;
        f.mass = p.mass;
        f.ln_pt = std::log(p.pt);
        f.ln_e = std::log(p.energy);
        f.ln_pt_rel = std::log(p.pt / jet.jet_pt);
        f.ln_e_rel = std::log(p.energy / jet.jet_energy);
        f.delta_r_jet = delta_r(p.eta, p.phi, jet.axis_eta, jet.axis_phi);
        out.push_back(f);
    }
    return out;
}

// --- augmentations ----------------------------------------------------------

inline JetRecord augment_rotate(const JetRecord& jet, double angle) {
    JetRecord out = jet;
    for (auto& p : out.particles) p.phi = wrap_phi(p.phi + angle);
    const JetSummary s = jet_summary(out.particles);
    out.jet_pt = s.jet_pt;
    out.jet_energy = s.jet_energy;
    out.axis_eta = s.axis_eta;
    out.axis_phi = s.axis_phi;
    return out;
}

inline JetRecord augment_smear(const JetRecord& jet, double sigma, uint64_t seed) {
    require(sigma >= 0.0, "augment_smear: sigma must be >= 0");
    JetRecord out = jet;
    Rng rng = Rng::derive(seed, "smear");
    for (auto& p : out.particles) {
        p.eta += rng.gaussian(0.0, sigma);
        p.phi = wrap_phi(p.phi + rng.gaussian(0.0, sigma));
        // pt and mass kept; energy back on shell.
        const double pc = p.pt * std::cosh(p.eta);
        p.energy = std::sqrt(p.mass * p.mass + pc * pc);
    }
    const JetSummary s = jet_summary(out.particles);
    out.jet_pt = s.jet_pt;
    out.jet_energy = s.jet_energy;
    out.axis_eta = s.axis_eta;
    out.axis_phi = s.axis_phi;
    return out;
}

inline JetRecord augment_boost(const JetRecord& jet, double delta_rapidity) {
    require(std::isfinite(delta_rapidity), "augment_boost: delta_rapidity must be finite");
    JetRecord out = jet;
    const double ch = std::cosh(delta_rapidity);
    const double sh = std::sinh(delta_rapidity);
    for (auto& p : out.particles) {
        const double pz = p.pz();
        const double e_new = p.energy * ch + pz * sh;
        const double pz_new = pz * ch + p.energy * sh;
        require(e_new > 0.0, "augment_boost: internal error, boosted energy not positive");
        p.energy = e_new;
        p.eta = std::asinh(pz_new / p.pt);
    }
    const JetSummary s = jet_summary(out.particles);
    out.jet_pt = s.jet_pt;
    out.jet_energy = s.jet_energy;
    out.axis_eta = s.axis_eta;
    out.axis_phi = s.axis_phi;
    return out;
}

// --- synthetic jets ----------------------------------------------------------

// One jet class: k prong directions inside a cone, particles scattered around
// the prongs with an exponentially falling pt spectrum, then rescaled so the
// jet pt lands in [jet_pt_min, jet_pt_max].
struct ClassSpec {
    int prongs = 1;
    int n_particles_min = 30;
    int n_particles_max = 60;
    double pt_scale = 10.0;     // mean of the per-particle exponential, pre-rescale
    double jet_pt_min = 400.0;
    double jet_pt_max = 600.0;
    double sigma = 0.05;        // gaussian scatter around the prong axis
    double prong_spread = 0.6;  // prong axes sampled in a disk of this radius
    double prong_min_sep = 0.45; // rejection-sampled minimum prong separation
    // random momentum sharing between prongs; the floor keeps every prong above
    // a minimum visibility (low floors make soft prongs genuinely hard to see)
    double prong_share_min = 0.15;
    // soft background component: uniform in a wider disk, softer pt spectrum
    double background_fraction = 0.08;
    double background_spread = 0.75;
    double background_pt_scale = 0.25; // relative to pt_scale
};

inline std::vector<ClassSpec> default_class_spec(const std::vector<int>& prong_counts) {
    std::vector<ClassSpec> spec;
    for (int k : prong_counts) {
        ClassSpec c;
        c.prongs = k;
        spec.push_back(c);
    }
    return spec;
}

inline std::vector<JetRecord> gen_synthetic(int n_jets, const std::vector<ClassSpec>& class_spec,
                                            uint64_t seed) {
    require(n_jets > 0, "gen_synthetic: n_jets must be positive");
    require(!class_spec.empty(), "gen_synthetic: class_spec must not be empty");
    for (const auto& c : class_spec) {
        require(c.prongs >= 1, "gen_synthetic: prongs must be >= 1");
        require(c.n_particles_min >= c.prongs && c.n_particles_max >= c.n_particles_min,
                "gen_synthetic: invalid particle-count range");
        require(c.pt_scale > 0.0 && c.jet_pt_min > 0.0 && c.jet_pt_max >= c.jet_pt_min,
                "gen_synthetic: invalid pt configuration");
        require(c.sigma >= 0.0 && c.prong_spread >= 0.0, "gen_synthetic: negative spread");
    }

    std::vector<JetRecord> jets;
    jets.reserve(static_cast<size_t>(n_jets));
    for (int j = 0; j < n_jets; ++j) {
        const int cls = j % static_cast<int>(class_spec.size());
        const ClassSpec& c = class_spec[static_cast<size_t>(cls)];
        Rng rng = Rng::derive(seed, "gensynth", {static_cast<uint64_t>(j)});

        // prong axes in a disk, rejection-sampled for pairwise separation so
        // that prong multiplicity stays geometrically unambiguous
        std::vector<std::pair<double, double>> prongs(static_cast<size_t>(c.prongs));
        double best_sep = -1.0;
        std::vector<std::pair<double, double>> best = prongs;
        for (int attempt = 0; attempt < 64; ++attempt) {
            for (auto& pr : prongs) {
                const double r = c.prong_spread * std::sqrt(rng.uniform());
                const double a = rng.uniform(0.0, 2.0 * kPi);
                pr = {r * std::cos(a), r * std::sin(a)};
            }
            double sep = 1e300;
            for (size_t a = 0; a < prongs.size(); ++a)
                for (size_t b = a + 1; b < prongs.size(); ++b)
                    sep = std::min(sep, delta_r(prongs[a].first, prongs[a].second,
                                                prongs[b].first, prongs[b].second));
            if (sep > best_sep) {
                best_sep = sep;
                best = prongs;
            }
            if (c.prongs == 1 || best_sep >= c.prong_min_sep) break;
        }
        prongs = best;

        // momentum shares across prongs: uniform on the simplex with a floor
        std::vector<double> share(static_cast<size_t>(c.prongs), 1.0);
        if (c.prongs > 1) {
            double total = 0.0;
            for (auto& w : share) {
                w = 0.01 - std::log(std::max(1.0 - rng.uniform(), 1e-12));
                total += w;
            }
            const double floor_share = std::min(c.prong_share_min, 1.0 / c.prongs);
            for (auto& w : share) w = floor_share + (1.0 - floor_share * c.prongs) * w / total;
        }

        const int n = rng.uniform_int(c.n_particles_min, c.n_particles_max);
        const int n_background = static_cast<int>(std::lround(c.background_fraction * n));
        std::vector<RawParticle> particles(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            RawParticle p;
            if (i < n - n_background) { // prong constituent
                const int prong = i % c.prongs;
                const auto& pr = prongs[static_cast<size_t>(prong)];
                p.eta = pr.first + (c.sigma > 0.0 ? rng.gaussian(0.0, c.sigma) : 0.0);
                p.phi = wrap_phi(pr.second + (c.sigma > 0.0 ? rng.gaussian(0.0, c.sigma) : 0.0));
                p.pt = c.prongs * share[static_cast<size_t>(prong)] * c.pt_scale *
                       (0.01 - std::log(std::max(1.0 - rng.uniform(), 1e-12)));
            } else { // soft background, uniform in a wider disk
                const double r = c.background_spread * std::sqrt(rng.uniform());
                const double a = rng.uniform(0.0, 2.0 * kPi);
                p.eta = r * std::cos(a);
                p.phi = wrap_phi(r * std::sin(a));
                p.pt = c.pt_scale * c.background_pt_scale *
                       (0.01 - std::log(std::max(1.0 - rng.uniform(), 1e-12)));
            }
            p.mass = 0.0;
            p.energy = p.pt * std::cosh(p.eta);
            particles[static_cast<size_t>(i)] = p;
        }

        const double target_pt = rng.uniform(c.jet_pt_min, c.jet_pt_max);
        const double cur_pt = jet_summary(particles).jet_pt;
        const double scale = target_pt / cur_pt;
        for (auto& p : particles) {
            p.pt *= scale;
            p.energy *= scale; // massless: E scales with pt
        }
        // center on the jet axis (standard preprocessing; leaves jet_pt intact)
        const JetSummary s = jet_summary(particles);
        for (auto& p : particles) {
            p.eta -= s.axis_eta;
            p.phi = wrap_phi(p.phi - s.axis_phi);
            p.energy = p.pt * std::cosh(p.eta); // massless, back on shell
        }
        jets.push_back(make_jet(std::move(particles), cls));
    }
    return jets;
}

// --- dataset I/O --------------------------------------------------------------

enum class DatasetFormat { csv, binary };

inline const char kBinaryMagic[5] = {'J', 'J', 'P', 'A', '1'};

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_i32(std::string& out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }

inline void put_f64(std::string& out, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class ByteReader {
public:
    ByteReader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

    uint32_t u32() {
        check(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    int32_t i32() { return static_cast<int32_t>(u32()); }

    double f64() {
        check(8);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        double d;
        std::memcpy(&d, &bits, sizeof(d));
        return d;
    }

    void raw(char* dst, size_t n) {
        check(n);
        std::memcpy(dst, data_.data() + pos_, n);
        pos_ += n;
    }

    size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == data_.size(); }

private:
    void check(size_t n) {
        if (pos_ + n > data_.size())
            fail(path_ + ": truncated file at offset " + std::to_string(pos_));
    }

    const std::string& data_;
    std::string path_;
    size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(path + ": cannot open file for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) fail(path + ": write failed");
}

inline void validate_jet(const JetRecord& jet, size_t index, const std::string& path) {
    const std::string where = path + ": jet " + std::to_string(index);
    require(!jet.particles.empty(), where + " has no particles");
    for (const auto& p : jet.particles) validate_particle(p, where);
    const JetSummary s = jet_summary(jet.particles);
    require(approx_rel(s.jet_pt, jet.jet_pt, 1e-6, 1e-9) &&
                approx_rel(s.jet_energy, jet.jet_energy, 1e-6, 1e-9),
            where + ": stored jet summary inconsistent with particles");
}

inline std::string fmt_double(double d) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

} // namespace detail

inline void write_dataset(const std::vector<JetRecord>& records, const std::string& path,
                          DatasetFormat format) {
    std::string out;
    if (format == DatasetFormat::binary) {
        out.append(kBinaryMagic, sizeof(kBinaryMagic));
        detail::put_u32(out, static_cast<uint32_t>(records.size()));
        for (const auto& jet : records) {
            detail::put_i32(out, jet.label ? *jet.label : -1);
            detail::put_u32(out, static_cast<uint32_t>(jet.particles.size()));
            for (const auto& p : jet.particles) {
                detail::put_f64(out, p.pt);
                detail::put_f64(out, p.eta);
                detail::put_f64(out, p.phi);
                detail::put_f64(out, p.energy);
                detail::put_f64(out, p.mass);
            }
        }
    } else {
        out = "jet_id,label,pt,eta,phi,energy,mass\n";
        for (size_t j = 0; j < records.size(); ++j) {
            const auto& jet = records[j];
            const std::string label = jet.label ? std::to_string(*jet.label) : "";
            for (const auto& p : jet.particles) {
                out += std::to_string(j);
                out += ',';
                out += label;
                out += ',';
                out += detail::fmt_double(p.pt);
                out += ',';
                out += detail::fmt_double(p.eta);
                out += ',';
                out += detail::fmt_double(p.phi);
                out += ',';
                out += detail::fmt_double(p.energy);
                out += ',';
                out += detail::fmt_double(p.mass);
                out += '\n';
            }
        }
    }
    detail::write_file(path, out);
}

inline std::vector<JetRecord> load_dataset(const std::string& path, DatasetFormat format) {
    const std::string data = detail::read_file(path);
    std::vector<JetRecord> records;
    if (data.empty()) return records; // empty file -> empty dataset

    if (format == DatasetFormat::binary) {
        detail::ByteReader r(data, path);
        char magic[5];
        r.raw(magic, 5);
        if (std::memcmp(magic, kBinaryMagic, 5) != 0)
            fail(path + ": bad magic at offset 0 (not a jet dataset)");
        const uint32_t n_jets = r.u32();
        records.reserve(n_jets);
        for (uint32_t j = 0; j < n_jets; ++j) {
            const int32_t label = r.i32();
            const uint32_t n_particles = r.u32();
            std::vector<RawParticle> particles(n_particles);
            for (auto& p : particles) {
                p.pt = r.f64();
                p.eta = r.f64();
                p.phi = wrap_phi(r.f64()); // identity for already-wrapped input
                p.energy = r.f64();
                p.mass = r.f64();
            }
            JetRecord jet = make_jet(std::move(particles),
                                     label >= 0 ? std::optional<int>(label) : std::nullopt);
            detail::validate_jet(jet, j, path);
            records.push_back(std::move(jet));
        }
        if (!r.at_end()) fail(path + ": trailing bytes at offset " + std::to_string(r.offset()));
        return records;
    }

    // csv: one particle per row, jets are contiguous runs of equal jet_id
    std::istringstream in(data);
    std::string line;
    size_t line_no = 0;
    bool have_current = false;
    std::string current_id;
    std::vector<RawParticle> particles;
    std::optional<int> label;

    auto flush = [&]() {
        if (!have_current) return;
        JetRecord jet = make_jet(std::move(particles), label);
        detail::validate_jet(jet, records.size(), path);
        records.push_back(std::move(jet));
        particles.clear();
        have_current = false;
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != "jet_id,label,pt,eta,phi,energy,mass")
                fail(path + ":1: bad csv header");
            continue;
        }
        if (line.empty()) continue;

        std::array<std::string, 7> fields;
        size_t start = 0;
        int nf = 0;
        for (size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                if (nf >= 7) fail(path + ":" + std::to_string(line_no) + ": too many columns");
                fields[static_cast<size_t>(nf++)] = line.substr(start, i - start);
                start = i + 1;
            }
        }
        if (nf != 7) fail(path + ":" + std::to_string(line_no) + ": expected 7 columns, got " + std::to_string(nf));

        auto parse_num = [&](const std::string& s, const char* what) {
            try {
                size_t used = 0;
                const double v = std::stod(s, &used);
                if (used != s.size()) throw std::invalid_argument(s);
                return v;
            } catch (const std::exception&) {
                fail(path + ":" + std::to_string(line_no) + ": bad " + what + " value '" + s + "'");
            }
        };

        if (have_current && fields[0] != current_id) flush();
        if (!have_current) {
            current_id = fields[0];
            have_current = true;
            label.reset();
            if (!fields[1].empty()) {
                try {
                    label = std::stoi(fields[1]);
                } catch (const std::exception&) {
                    fail(path + ":" + std::to_string(line_no) + ": bad label '" + fields[1] + "'");
                }
            }
        }

        RawParticle p;
        p.pt = parse_num(fields[2], "pt");
        p.eta = parse_num(fields[3], "eta");
        p.phi = wrap_phi(parse_num(fields[4], "phi"));
        p.energy = parse_num(fields[5], "energy");
        p.mass = parse_num(fields[6], "mass");
        particles.push_back(p);
    }
    flush();
    return records;
}

} // namespace jetjepa
