#pragma once

// VLN evaluation metrics: TL, NE, SR, SPL, CLS, nDTW, sDTW. Ground cost is
// the geodesic graph distance by default (a flag switches to Euclidean).

#include "nvem/world.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace nvem {

enum class GroundCost { Geodesic, Euclidean };

struct TrajectoryRecord {
  std::string episode_id;
  std::string world_id;
  std::string split;
  std::vector<int> agent;  // node sequence; consecutive nodes adjacent or equal
  std::vector<int> gold;
};

struct EpisodeMetrics {
  double tl = 0, ne = 0, sr = 0, spl = 0, cls = 0, ndtw = 0, sdtw = 0;
};

namespace metric_detail {

inline double ground(const NavGraph& g, int a, int b, GroundCost gc) {
  return gc == GroundCost::Geodesic ? g.geodesic(a, b) : g.euclidean(a, b);
}

inline double path_length(const NavGraph& g, const std::vector<int>& path) {
  double len = 0.0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i)
    len += g.euclidean(path[i], path[i + 1]);
  return len;
}

}  // namespace metric_detail

// Classic DTW with unit steps (match, insert, delete) over node sequences.
inline double dtw_cost(const NavGraph& g, const std::vector<int>& a,
                       const std::vector<int>& b, GroundCost gc = GroundCost::Geodesic) {
  if (a.empty() || b.empty()) throw std::invalid_argument("dtw: empty path");
  std::size_t n = a.size(), m = b.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      double d = metric_detail::ground(g, a[i - 1], b[j - 1], gc);
      cur[j] = d + std::min({prev[j], cur[j - 1], prev[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline double ndtw(const NavGraph& g, const std::vector<int>& agent,
                   const std::vector<int>& gold, double threshold = 3.0,
                   GroundCost gc = GroundCost::Geodesic) {
  double cost = dtw_cost(g, agent, gold, gc);
  return std::exp(-cost / (static_cast<double>(gold.size()) * threshold));
}

inline double cls(const NavGraph& g, const std::vector<int>& agent,
                  const std::vector<int>& gold, double threshold = 3.0,
                  GroundCost gc = GroundCost::Geodesic) {
  if (agent.empty() || gold.empty()) throw std::invalid_argument("cls: empty path");
  double pc = 0.0;
  for (int r : gold) {
    double best = std::numeric_limits<double>::infinity();
    for (int p : agent) best = std::min(best, metric_detail::ground(g, r, p, gc));
    pc += std::exp(-best / threshold);
  }
  pc /= static_cast<double>(gold.size());
  double gold_len = metric_detail::path_length(g, gold);
  double tl = metric_detail::path_length(g, agent);
  double epl = pc * gold_len;
  double denom = epl + std::abs(tl - epl);
  double ls = denom > 0.0 ? epl / denom : 1.0;
  return pc * ls;
}

inline EpisodeMetrics compute_metrics(const NavGraph& g, const TrajectoryRecord& rec,
                                      double threshold = 3.0,
                                      GroundCost gc = GroundCost::Geodesic) {
  if (rec.agent.empty() || rec.gold.empty())
    throw std::invalid_argument("metrics: empty trajectory");
  for (std::size_t i = 0; i + 1 < rec.agent.size(); ++i)
    if (rec.agent[i] != rec.agent[i + 1] && !g.adjacent(rec.agent[i], rec.agent[i + 1]))
      throw std::invalid_argument("metrics: agent path has non-adjacent consecutive nodes");

  EpisodeMetrics m;
  m.tl = metric_detail::path_length(g, rec.agent);
  int goal = rec.gold.back();
  m.ne = g.geodesic(rec.agent.back(), goal);
  m.sr = m.ne <= threshold ? 1.0 : 0.0;
  double opt = g.geodesic(rec.gold.front(), goal);
  m.spl = opt > 0.0 ? m.sr * opt / std::max(m.tl, opt) : m.sr;
  m.ndtw = ndtw(g, rec.agent, rec.gold, threshold, gc);
  m.cls = cls(g, rec.agent, rec.gold, threshold, gc);
  m.sdtw = m.sr * m.ndtw;
  return m;
}

// ---- aggregation and reports ---------------------------------------------------

struct SplitSummary {
  int episodes = 0;
  EpisodeMetrics mean;
};

struct MetricsReport {
  // episode rows in input order, plus per-split unweighted means
  std::vector<std::pair<TrajectoryRecord, EpisodeMetrics>> rows;
  std::map<std::string, SplitSummary> splits;
};

inline MetricsReport aggregate(std::vector<std::pair<TrajectoryRecord, EpisodeMetrics>> rows) {
  MetricsReport rep;
  rep.rows = std::move(rows);
  for (const auto& [rec, m] : rep.rows) {
    SplitSummary& s = rep.splits[rec.split];
    s.episodes += 1;
    s.mean.tl += m.tl;
    s.mean.ne += m.ne;
    s.mean.sr += m.sr;
    s.mean.spl += m.spl;
    s.mean.cls += m.cls;
    s.mean.ndtw += m.ndtw;
    s.mean.sdtw += m.sdtw;
  }
  for (auto& [name, s] : rep.splits) {
    double n = static_cast<double>(s.episodes);
    s.mean.tl /= n;
    s.mean.ne /= n;
    s.mean.sr /= n;
    s.mean.spl /= n;
    s.mean.cls /= n;
    s.mean.ndtw /= n;
    s.mean.sdtw /= n;
  }
  return rep;
}

inline nlohmann::json metrics_to_json(const EpisodeMetrics& m) {
  return {{"tl", m.tl},   {"ne", m.ne},     {"sr", m.sr},     {"spl", m.spl},
          {"cls", m.cls}, {"ndtw", m.ndtw}, {"sdtw", m.sdtw}};
}

// Line-delimited report: one record per episode, then one per split summary.
inline void write_report(const MetricsReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  for (const auto& [rec, m] : rep.rows) {
    nlohmann::json j;
    j["type"] = "episode";
    j["id"] = rec.episode_id;
    j["split"] = rec.split;
    j["metrics"] = metrics_to_json(m);
    out << j.dump() << '\n';
  }
  for (const auto& [name, s] : rep.splits) {
    nlohmann::json j;
    j["type"] = "split";
    j["split"] = name;
    j["episodes"] = s.episodes;
    j["metrics"] = metrics_to_json(s.mean);
    out << j.dump() << '\n';
  }
}

inline std::string render_table(const MetricsReport& rep) {
  char line[256];
  std::string out;
  std::snprintf(line, sizeof line, "%-24s %5s %7s %7s %6s %6s %6s %6s %6s\n",
                "split", "n", "TL", "NE", "SR", "SPL", "CLS", "nDTW", "sDTW");
  out += line;
  for (const auto& [name, s] : rep.splits) {
    std::snprintf(line, sizeof line,
                  "%-24s %5d %7.2f %7.2f %6.3f %6.3f %6.3f %6.3f %6.3f\n",
                  name.c_str(), s.episodes, s.mean.tl, s.mean.ne, s.mean.sr,
                  s.mean.spl, s.mean.cls, s.mean.ndtw, s.mean.sdtw);
    out += line;
  }
  return out;
}

// ---- trajectory files -----------------------------------------------------------

inline void save_trajectories(const std::vector<TrajectoryRecord>& recs,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trajectories: " + path);
  nlohmann::json header;
  header["type"] = "header";
  header["schema_version"] = kDatasetSchemaVersion;
  out << header.dump() << '\n';
  for (const auto& r : recs) {
    nlohmann::json j;
    j["type"] = "trajectory";
    j["id"] = r.episode_id;
    j["world"] = r.world_id;
    j["split"] = r.split;
    j["agent"] = r.agent;
    j["gold"] = r.gold;
    out << j.dump() << '\n';
  }
}

inline std::vector<TrajectoryRecord> load_trajectories(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trajectories: " + path);
  std::vector<TrajectoryRecord> out;
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw std::runtime_error("trajectories line " + std::to_string(lineno) +
                               ": malformed record: " + ex.what());
    }
    try {
      std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        int ver = j.at("schema_version").get<int>();
        if (ver != kDatasetSchemaVersion)
          throw std::runtime_error("schema version mismatch: got " + std::to_string(ver));
        have_header = true;
      } else if (type == "trajectory") {
        if (!have_header) throw std::runtime_error("trajectory record before header");
        TrajectoryRecord r;
        r.episode_id = j.at("id").get<std::string>();
        r.world_id = j.at("world").get<std::string>();
        r.split = j.at("split").get<std::string>();
        r.agent = j.at("agent").get<std::vector<int>>();
        r.gold = j.at("gold").get<std::vector<int>>();
        out.push_back(std::move(r));
      } else {
        throw std::runtime_error("unknown record type: " + type);
      }
    } catch (const std::exception& ex) {
      throw std::runtime_error("trajectories line " + std::to_string(lineno) + ": " +
                               ex.what());
    }
  }
  if (!have_header)
    throw std::runtime_error("trajectories line 1: missing header record");
  return out;
}

}  // namespace nvem
