#ifndef NFKAM_SERIALIZE_HPP
#define NFKAM_SERIALIZE_HPP

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfkam/lattice.hpp"
#include "nfkam/series.hpp"

namespace nfkam {

using Json = nlohmann::ordered_json;

// All numbers travel as decimal strings so golden-file diffs never depend on
// locale or formatting defaults.
inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

inline double parse_double(const Json& v, const char* what) {
  if (v.is_string()) {
    const std::string& s = v.get_ref<const std::string&>();
    std::size_t used = 0;
    double out = 0.0;
    try {
      out = std::stod(s, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string(what) + ": bad decimal string '" + s + "'");
    }
    if (used != s.size())
      throw std::invalid_argument(std::string(what) + ": trailing junk in '" + s + "'");
    return out;
  }
  if (v.is_number()) return v.get<double>();
  throw std::invalid_argument(std::string(what) + ": expected a decimal string");
}

inline long long parse_int(const Json& v, const char* what) {
  if (v.is_number_integer()) return v.get<long long>();
  if (v.is_string()) {
    const std::string& s = v.get_ref<const std::string&>();
    std::size_t used = 0;
    long long out = 0;
    try {
      out = std::stoll(s, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string(what) + ": bad integer '" + s + "'");
    }
    if (used != s.size())
      throw std::invalid_argument(std::string(what) + ": trailing junk in '" + s + "'");
    return out;
  }
  throw std::invalid_argument(std::string(what) + ": expected an integer");
}

// ---- series literal ------------------------------------------------------
//
// A series is a list of records {k, j, coef, egrade}, ordered by
// (egrade, |k|_1, k, j). Each record holds one real coefficient: a record
// whose wavevector is canonical (zero, or first nonzero entry positive)
// carries the cosine amplitude of <k, x>; the mirrored wavevector -k carries
// the sine amplitude. The k = 0 sine slot is identically zero and never
// appears.

inline Json series_to_json(const FTSeries& a) {
  struct Rec {
    int egrade;
    int knorm;
    std::vector<int> k;
    std::vector<int> j;
    double coef;
  };
  std::vector<Rec> recs;
  for (const auto& [key, p] : a.terms()) {
    if (p.c != 0.0) recs.push_back({key.egrade, abs_sum(key.k), key.k, key.j, p.c});
    if (p.s != 0.0) {
      std::vector<int> km = key.k;
      for (int& x : km) x = -x;
      recs.push_back({key.egrade, abs_sum(km), std::move(km), key.j, p.s});
    }
  }
  std::sort(recs.begin(), recs.end(), [](const Rec& a, const Rec& b) {
    if (a.egrade != b.egrade) return a.egrade < b.egrade;
    if (a.knorm != b.knorm) return a.knorm < b.knorm;
    if (a.k != b.k) return a.k < b.k;
    return a.j < b.j;
  });
  Json out = Json::array();
  for (const Rec& r : recs) {
    Json rec;
    rec["k"] = r.k;
    rec["j"] = r.j;
    rec["coef"] = fmt_double(r.coef);
    rec["egrade"] = r.egrade;
    out.push_back(std::move(rec));
  }
  return out;
}

inline FTSeries series_from_json(const Json& v, const PhaseSignature& sig, int kcut,
                                 int dcut, int grade_denom = 1) {
  if (!v.is_array()) throw std::invalid_argument("series literal: expected a list");
  FTSeries out(sig, kcut, dcut, grade_denom);
  for (const Json& rec : v) {
    if (!rec.is_object() || !rec.contains("k") || !rec.contains("j") ||
        !rec.contains("coef") || !rec.contains("egrade"))
      throw std::invalid_argument("series literal: record needs k, j, coef, egrade");
    std::vector<int> k, j;
    for (const Json& x : rec.at("k")) k.push_back(static_cast<int>(parse_int(x, "series k")));
    for (const Json& x : rec.at("j")) j.push_back(static_cast<int>(parse_int(x, "series j")));
    const double coef = parse_double(rec.at("coef"), "series coef");
    const int g = static_cast<int>(parse_int(rec.at("egrade"), "series egrade"));
    bool canonical = true;
    for (int x : k) {
      if (x > 0) break;
      if (x < 0) {
        canonical = false;
        break;
      }
    }
    if (canonical) {
      out.add_term(std::move(k), std::move(j), g, coef, 0.0);
    } else {
      for (int& x : k) x = -x;
      out.add_term(std::move(k), std::move(j), g, 0.0, coef);
    }
  }
  return out;
}

// ---- resonance frame -----------------------------------------------------

inline Json frame_to_json(const ResonanceFrame& f) {
  Json out;
  out["d"] = f.d;
  out["m0"] = f.m0;
  Json gens = Json::array();
  for (int c = 0; c < f.m0; ++c) {
    Json col = Json::array();
    for (int r = 0; r < f.d; ++r) col.push_back(f.generators(r, c));
    gens.push_back(std::move(col));
  }
  out["generators"] = std::move(gens);
  Json k0 = Json::array();
  for (int r = 0; r < f.d; ++r)
    for (int c = 0; c < f.d; ++c) k0.push_back(f.K0(r, c));
  out["K0"] = std::move(k0);
  return out;
}

inline ResonanceFrame frame_from_json(const Json& v) {
  const int d = static_cast<int>(parse_int(v.at("d"), "frame d"));
  const int m0 = static_cast<int>(parse_int(v.at("m0"), "frame m0"));
  std::vector<std::vector<long long>> gens;
  for (const Json& col : v.at("generators")) {
    std::vector<long long> g;
    for (const Json& x : col) g.push_back(parse_int(x, "frame generator"));
    gens.push_back(std::move(g));
  }
  if (static_cast<int>(gens.size()) != m0)
    throw std::invalid_argument("frame: generator count disagrees with m0");
  ResonanceFrame f = unimodular_completion(gens);
  if (f.d != d) throw std::invalid_argument("frame: d disagrees with the generators");
  // the stored K0 must reproduce the deterministic completion
  const Json& k0 = v.at("K0");
  if (static_cast<int>(k0.size()) != d * d)
    throw std::invalid_argument("frame: K0 needs d*d entries");
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c)
      if (parse_int(k0[r * d + c], "frame K0") != f.K0(r, c))
        throw std::invalid_argument("frame: stored K0 is not the canonical completion");
  return f;
}

// ---- model config --------------------------------------------------------

struct ModelConfig {
  std::string model;  // built-in name, or "custom"
  int m = 1;
  int m0 = 1;
  int kcut = 12;
  int dcut = 6;
  int grade_denom = 1;
  double eps = 1e-3;
  std::vector<double> omega;          // m entries (reduced models)
  std::vector<std::vector<double>> M;  // (m + 2 m0)^2 quadratic matrix
  Json perturbation = Json::array();   // series literal, signature (m, m0)
  std::vector<std::vector<long long>> generators;  // unreduced models only
  std::vector<double> y0;
  std::string profile = "practical";
  std::string mode = "none";
  int steps = 2;
  long long seed = 0;
};

inline Json config_to_json(const ModelConfig& c) {
  Json out;
  out["model"] = c.model;
  out["m"] = c.m;
  out["m0"] = c.m0;
  out["kcut"] = c.kcut;
  out["dcut"] = c.dcut;
  out["grade_denom"] = c.grade_denom;
  out["eps"] = fmt_double(c.eps);
  Json om = Json::array();
  for (double w : c.omega) om.push_back(fmt_double(w));
  out["omega"] = std::move(om);
  Json mm = Json::array();
  for (const auto& row : c.M) {
    Json jr = Json::array();
    for (double x : row) jr.push_back(fmt_double(x));
    mm.push_back(std::move(jr));
  }
  out["M"] = std::move(mm);
  out["perturbation"] = c.perturbation;
  Json gens = Json::array();
  for (const auto& g : c.generators) {
    Json jg = Json::array();
    for (long long x : g) jg.push_back(x);
    gens.push_back(std::move(jg));
  }
  out["generators"] = std::move(gens);
  Json jy = Json::array();
  for (double y : c.y0) jy.push_back(fmt_double(y));
  out["y0"] = std::move(jy);
  out["profile"] = c.profile;
  out["mode"] = c.mode;
  out["steps"] = c.steps;
  out["seed"] = c.seed;
  return out;
}

inline ModelConfig config_from_json(const Json& v) {
  ModelConfig c;
  c.model = v.at("model").get<std::string>();
  c.m = static_cast<int>(parse_int(v.at("m"), "config m"));
  c.m0 = static_cast<int>(parse_int(v.at("m0"), "config m0"));
  c.kcut = static_cast<int>(parse_int(v.at("kcut"), "config kcut"));
  c.dcut = static_cast<int>(parse_int(v.at("dcut"), "config dcut"));
  if (v.contains("grade_denom"))
    c.grade_denom = static_cast<int>(parse_int(v.at("grade_denom"), "config grade_denom"));
  c.eps = parse_double(v.at("eps"), "config eps");
  for (const Json& x : v.at("omega")) c.omega.push_back(parse_double(x, "config omega"));
  for (const Json& row : v.at("M")) {
    std::vector<double> r;
    for (const Json& x : row) r.push_back(parse_double(x, "config M"));
    c.M.push_back(std::move(r));
  }
  c.perturbation = v.at("perturbation");
  for (const Json& g : v.at("generators")) {
    std::vector<long long> gg;
    for (const Json& x : g) gg.push_back(parse_int(x, "config generator"));
    c.generators.push_back(std::move(gg));
  }
  for (const Json& x : v.at("y0")) c.y0.push_back(parse_double(x, "config y0"));
  c.profile = v.at("profile").get<std::string>();
  c.mode = v.at("mode").get<std::string>();
  c.steps = static_cast<int>(parse_int(v.at("steps"), "config steps"));
  c.seed = parse_int(v.at("seed"), "config seed");
  if (c.m < 1 || c.m0 < 0) throw std::invalid_argument("config: bad signature");
  if (c.profile != "paper" && c.profile != "practical")
    throw std::invalid_argument("config: profile must be paper or practical");
  if (c.mode != "none" && c.mode != "plain" && c.mode != "partial" &&
      c.mode != "isoenergetic")
    throw std::invalid_argument("config: unknown mode " + c.mode);
  return c;
}

inline void save_json(const Json& v, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << v.dump(2) << "\n";
}

inline Json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace nfkam

#endif
