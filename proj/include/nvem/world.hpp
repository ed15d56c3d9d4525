#pragma once

// Navigation worlds: nodes with 2-D positions, undirected edges, per-node
// 36-view panoramas with synthetic features and object detections, shortest
// path tables, observation assembly, and the line-delimited dataset format.

#include "nvem/geometry.hpp"
#include "nvem/vocab.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nvem {

inline constexpr int kDatasetSchemaVersion = 1;

struct ObjectDetection {
  int label = 0;          // 0 is the reserved null label
  double salience = 0.0;  // (0, 1]
  Orientation orientation;  // equals the owning view's orientation
};

struct View {
  int slot = 0;
  Orientation orientation;
  Eigen::VectorXd feature;
  std::vector<ObjectDetection> objects;
  int scene_class = 0;  // class painted on this view's column
};

// Graph-level candidate geometry, frame-independent.
struct CandidateInfo {
  int target_node = -1;
  Orientation orientation;  // from node position toward target position
  int owning_view = 0;      // middle-row slot whose sector contains the heading
};

// A planted pair of same-class candidates, told apart only by a reference
// object in the gold candidate's neighbor views.
struct DistractorPlant {
  int node = -1;
  int gold_target = -1;
  int distractor_target = -1;
  int subject_class = -1;
  int ref_label = -1;
  int ref_view = -1;
};

struct NavNode {
  int id = -1;
  double x = 0.0;
  double y = 0.0;
};

class NavGraph {
 public:
  std::string world_id;
  std::vector<NavNode> nodes;
  std::vector<std::vector<int>> adj;           // sorted neighbor lists
  std::vector<std::vector<View>> panoramas;    // [node][slot], 36 per node
  std::vector<std::vector<int>> view_classes;  // [node][column], 12 per node
  std::vector<DistractorPlant> plants;

  int num_nodes() const { return static_cast<int>(nodes.size()); }

  bool adjacent(int a, int b) const {
    const auto& n = adj[static_cast<std::size_t>(a)];
    return std::binary_search(n.begin(), n.end(), b);
  }

  double euclidean(int a, int b) const {
    double dx = nodes[a].x - nodes[b].x;
    double dy = nodes[a].y - nodes[b].y;
    return std::sqrt(dx * dx + dy * dy);
  }

  double heading_to(int a, int b) const {
    return wrap_heading(std::atan2(nodes[b].y - nodes[a].y, nodes[b].x - nodes[a].x));
  }

  double geodesic(int a, int b) const { return dist_(a, b); }

  // First node after `a` on a shortest path from a to b.
  int next_hop(int a, int b) const { return next_(a, b); }

  std::vector<int> shortest_path(int a, int b) const {
    std::vector<int> path = {a};
    while (a != b) {
      a = next_(a, b);
      path.push_back(a);
    }
    return path;
  }

  const std::vector<CandidateInfo>& candidates(int node) const {
    return candidates_[static_cast<std::size_t>(node)];
  }

  const CandidateInfo* candidate_toward(int node, int target) const {
    for (const auto& c : candidates_[static_cast<std::size_t>(node)])
      if (c.target_node == target) return &c;
    return nullptr;
  }

  const DistractorPlant* plant_at(int node, int gold_target) const {
    for (const auto& p : plants)
      if (p.node == node && p.gold_target == gold_target) return &p;
    return nullptr;
  }

  // Builds candidates and the all-pairs shortest-path table; validates
  // connectivity and basic shape invariants.
  void finalize() {
    int n = num_nodes();
    if (n == 0) throw std::runtime_error("empty graph");
    candidates_.assign(static_cast<std::size_t>(n), {});
    for (int u = 0; u < n; ++u) {
      for (int v : adj[static_cast<std::size_t>(u)]) {
        CandidateInfo c;
        c.target_node = v;
        c.orientation = Orientation::canonical(heading_to(u, v), 0.0);
        c.owning_view = owning_slot(c.orientation);
        candidates_[static_cast<std::size_t>(u)].push_back(c);
      }
    }
    double inf = std::numeric_limits<double>::infinity();
    dist_ = Eigen::MatrixXd::Constant(n, n, inf);
    next_ = Eigen::MatrixXi::Constant(n, n, -1);
    for (int u = 0; u < n; ++u) {
      dist_(u, u) = 0.0;
      next_(u, u) = u;
      for (int v : adj[static_cast<std::size_t>(u)]) {
        dist_(u, v) = euclidean(u, v);
        next_(u, v) = v;
      }
    }
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i) {
        if (dist_(i, k) == inf) continue;
        for (int j = 0; j < n; ++j) {
          double through = dist_(i, k) + dist_(k, j);
          if (through < dist_(i, j) - 1e-12) {
            dist_(i, j) = through;
            next_(i, j) = next_(i, k);
          }
        }
      }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (dist_(i, j) == inf) throw std::runtime_error("graph not connected");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["type"] = "world";
    j["id"] = world_id;
    nlohmann::json jn = nlohmann::json::array();
    for (const auto& nd : nodes) jn.push_back({nd.x, nd.y});
    j["nodes"] = std::move(jn);
    nlohmann::json je = nlohmann::json::array();
    for (int u = 0; u < num_nodes(); ++u)
      for (int v : adj[static_cast<std::size_t>(u)])
        if (u < v) je.push_back({u, v});
    j["edges"] = std::move(je);
    j["classes"] = view_classes;
    nlohmann::json jf = nlohmann::json::array();
    nlohmann::json jo = nlohmann::json::array();
    for (const auto& pano : panoramas) {
      nlohmann::json nf = nlohmann::json::array();
      nlohmann::json no = nlohmann::json::array();
      for (const auto& view : pano) {
        nf.push_back(std::vector<double>(view.feature.data(),
                                         view.feature.data() + view.feature.size()));
        nlohmann::json objs = nlohmann::json::array();
        for (const auto& ob : view.objects) objs.push_back({ob.label, ob.salience});
        no.push_back(std::move(objs));
      }
      jf.push_back(std::move(nf));
      jo.push_back(std::move(no));
    }
    j["features"] = std::move(jf);
    j["objects"] = std::move(jo);
    nlohmann::json jp = nlohmann::json::array();
    for (const auto& p : plants)
      jp.push_back({{"node", p.node},
                    {"gold", p.gold_target},
                    {"distractor", p.distractor_target},
                    {"subject_class", p.subject_class},
                    {"ref_label", p.ref_label},
                    {"ref_view", p.ref_view}});
    j["plants"] = std::move(jp);
    return j;
  }

  static NavGraph from_json(const nlohmann::json& j) {
    NavGraph g;
    g.world_id = j.at("id").get<std::string>();
    const auto& jn = j.at("nodes");
    int n = static_cast<int>(jn.size());
    g.nodes.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      g.nodes[i].id = i;
      g.nodes[i].x = jn[i][0].get<double>();
      g.nodes[i].y = jn[i][1].get<double>();
    }
    g.adj.assign(static_cast<std::size_t>(n), {});
    for (const auto& e : j.at("edges")) {
      int a = e[0].get<int>(), b = e[1].get<int>();
      g.adj[static_cast<std::size_t>(a)].push_back(b);
      g.adj[static_cast<std::size_t>(b)].push_back(a);
    }
    for (auto& lst : g.adj) std::sort(lst.begin(), lst.end());
    g.view_classes = j.at("classes").get<std::vector<std::vector<int>>>();
    const auto& jf = j.at("features");
    const auto& jo = j.at("objects");
    g.panoramas.assign(static_cast<std::size_t>(n), {});
    for (int u = 0; u < n; ++u) {
      auto& pano = g.panoramas[static_cast<std::size_t>(u)];
      pano.resize(kNumViews);
      for (int s = 0; s < kNumViews; ++s) {
        View& view = pano[static_cast<std::size_t>(s)];
        view.slot = s;
        view.orientation = slot_orientation(s);
        view.scene_class = g.view_classes[static_cast<std::size_t>(u)]
                                         [static_cast<std::size_t>(view_col(s))];
        const auto& fv = jf[u][s];
        view.feature.resize(static_cast<long>(fv.size()));
        for (std::size_t i = 0; i < fv.size(); ++i)
          view.feature[static_cast<long>(i)] = fv[i].get<double>();
        for (const auto& ob : jo[u][s]) {
          ObjectDetection det;
          det.label = ob[0].get<int>();
          det.salience = ob[1].get<double>();
          det.orientation = view.orientation;
          view.objects.push_back(det);
        }
      }
    }
    for (const auto& p : j.at("plants")) {
      DistractorPlant d;
      d.node = p.at("node").get<int>();
      d.gold_target = p.at("gold").get<int>();
      d.distractor_target = p.at("distractor").get<int>();
      d.subject_class = p.at("subject_class").get<int>();
      d.ref_label = p.at("ref_label").get<int>();
      d.ref_view = p.at("ref_view").get<int>();
      g.plants.push_back(d);
    }
    g.finalize();
    return g;
  }

 private:
  std::vector<std::vector<CandidateInfo>> candidates_;
  Eigen::MatrixXd dist_;
  Eigen::MatrixXi next_;
};

// ---- episodes ---------------------------------------------------------------

struct TokenSpan {
  int begin = 0;
  int end = 0;  // half-open
};

struct HopMeta {
  TokenSpan action;
  TokenSpan subject;
  std::optional<TokenSpan> reference;
  bool distractor = false;  // gold candidate is a planted pair member
  bool ambiguous = false;   // pair shares the action bucket at this arrival
};

struct Episode {
  std::string episode_id;
  std::string world_id;
  std::string split;  // train / val_seen / val_unseen / val_unseen_distractor
  int start_node = -1;
  int goal_node = -1;
  std::vector<int> gold_path;
  std::vector<int> tokens;
  std::vector<HopMeta> meta;  // diagnostics only, never consumed by the model

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["type"] = "episode";
    j["id"] = episode_id;
    j["world"] = world_id;
    j["split"] = split;
    j["start"] = start_node;
    j["goal"] = goal_node;
    j["path"] = gold_path;
    j["tokens"] = tokens;
    nlohmann::json jm = nlohmann::json::array();
    for (const auto& h : meta) {
      nlohmann::json e;
      e["action"] = {h.action.begin, h.action.end};
      e["subject"] = {h.subject.begin, h.subject.end};
      if (h.reference)
        e["reference"] = {h.reference->begin, h.reference->end};
      else
        e["reference"] = nullptr;
      e["distractor"] = h.distractor;
      e["ambiguous"] = h.ambiguous;
      jm.push_back(std::move(e));
    }
    j["meta"] = std::move(jm);
    return j;
  }

  static Episode from_json(const nlohmann::json& j) {
    Episode e;
    e.episode_id = j.at("id").get<std::string>();
    e.world_id = j.at("world").get<std::string>();
    e.split = j.at("split").get<std::string>();
    e.start_node = j.at("start").get<int>();
    e.goal_node = j.at("goal").get<int>();
    e.gold_path = j.at("path").get<std::vector<int>>();
    e.tokens = j.at("tokens").get<std::vector<int>>();
    for (const auto& m : j.at("meta")) {
      HopMeta h;
      h.action = {m.at("action")[0].get<int>(), m.at("action")[1].get<int>()};
      h.subject = {m.at("subject")[0].get<int>(), m.at("subject")[1].get<int>()};
      if (!m.at("reference").is_null())
        h.reference = TokenSpan{m.at("reference")[0].get<int>(),
                                m.at("reference")[1].get<int>()};
      h.distractor = m.at("distractor").get<bool>();
      h.ambiguous = m.at("ambiguous").get<bool>();
      e.meta.push_back(std::move(h));
    }
    return e;
  }
};

// ---- observations ------------------------------------------------------------

struct ObsConfig {
  int neighbors = 4;  // I; 1 means "the owning view itself" (single-view mode)
  int objects = 8;    // J, top by salience, null-padded with a mask bit
};

// Agent-frame candidate representation.
struct Candidate {
  int target_node = -1;  // -1 is STOP
  Orientation abs_orientation;
  OrientationDelta rel;  // orientation relative to the agent heading
  int owning_view = -1;
  std::vector<int> neighbor_slots;       // I entries
  Eigen::MatrixXd neighbor_features;     // F x I
  Eigen::MatrixXd neighbor_ori_embed;    // 128 x I, agent frame
  Eigen::MatrixXd object_delta_embed;    // 128 x I, E_ori(d_view - d_k)
  Eigen::MatrixXi object_labels;         // I x J
  std::vector<std::uint8_t> object_mask; // I*J, i-major
  Eigen::VectorXd composed;              // (F+128), feature + orientation embed

  bool is_stop() const { return target_node < 0; }
};

struct Observation {
  int node = -1;
  double agent_heading = 0.0;
  Eigen::MatrixXd views;  // (F+128) x 36, agent frame
  std::vector<Candidate> candidates;  // movement candidates, then STOP last
};

inline Observation observe(const NavGraph& g, int node, double agent_heading,
                           const ObsConfig& oc = {}) {
  if (node < 0 || node >= g.num_nodes())
    throw std::out_of_range("observe: unknown node id");
  if (oc.neighbors != 1 && oc.neighbors != 4 && oc.neighbors != 8)
    throw std::invalid_argument("observe: neighbor count must be 1, 4 or 8");
  const auto& pano = g.panoramas[static_cast<std::size_t>(node)];
  int F = static_cast<int>(pano[0].feature.size());
  int I = oc.neighbors, J = oc.objects;

  Observation obs;
  obs.node = node;
  obs.agent_heading = agent_heading;
  obs.views.resize(F + kOrientationDim, kNumViews);
  for (int s = 0; s < kNumViews; ++s) {
    const View& view = pano[static_cast<std::size_t>(s)];
    obs.views.block(0, s, F, 1) = view.feature;
    obs.views.block(F, s, kOrientationDim, 1) = embed_angles(
        wrap_signed(view.orientation.heading - agent_heading), view.orientation.elevation);
  }

  for (const CandidateInfo& info : g.candidates(node)) {
    Candidate c;
    c.target_node = info.target_node;
    c.abs_orientation = info.orientation;
    c.rel = OrientationDelta{wrap_signed(info.orientation.heading - agent_heading),
                             info.orientation.elevation};
    c.owning_view = info.owning_view;
    c.neighbor_slots = I == 1 ? std::vector<int>{info.owning_view}
                              : neighbor_views(info.owning_view, I);
    c.neighbor_features.resize(F, I);
    c.neighbor_ori_embed.resize(kOrientationDim, I);
    c.object_delta_embed.resize(kOrientationDim, I);
    c.object_labels = Eigen::MatrixXi::Zero(I, J);
    c.object_mask.assign(static_cast<std::size_t>(I * J), 0);
    for (int i = 0; i < I; ++i) {
      const View& nb = pano[static_cast<std::size_t>(c.neighbor_slots[i])];
      c.neighbor_features.col(i) = nb.feature;
      c.neighbor_ori_embed.col(i) = embed_angles(
          wrap_signed(nb.orientation.heading - agent_heading), nb.orientation.elevation);
      c.object_delta_embed.col(i) =
          embed_delta(relative_orientation(nb.orientation, info.orientation));
      // top-J objects by salience; ties by label, then insertion order
      std::vector<int> order(nb.objects.size());
      for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<int>(k);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (nb.objects[a].salience != nb.objects[b].salience)
          return nb.objects[a].salience > nb.objects[b].salience;
        return nb.objects[a].label < nb.objects[b].label;
      });
      int take = std::min<int>(J, static_cast<int>(order.size()));
      for (int k = 0; k < take; ++k) {
        c.object_labels(i, k) = nb.objects[static_cast<std::size_t>(order[k])].label;
        c.object_mask[static_cast<std::size_t>(i * J + k)] = 1;
      }
    }
    c.composed.resize(F + kOrientationDim);
    c.composed.head(F) = pano[static_cast<std::size_t>(c.owning_view)].feature;
    c.composed.tail(kOrientationDim) = embed_angles(c.rel.heading, c.rel.elevation);
    obs.candidates.push_back(std::move(c));
  }

  Candidate stop;
  stop.target_node = -1;
  stop.composed = Eigen::VectorXd::Zero(F + kOrientationDim);
  obs.candidates.push_back(std::move(stop));
  return obs;
}

// ---- dataset -----------------------------------------------------------------

struct Dataset {
  int feature_dim = 64;
  int scene_classes = 30;
  int object_vocab = 100;  // labels 1..object_vocab; 0 reserved null
  Vocab vocab;
  std::vector<NavGraph> worlds;
  std::vector<Episode> episodes;

  const NavGraph& world(const std::string& id) const {
    auto it = world_index_.find(id);
    if (it == world_index_.end()) throw std::out_of_range("unknown world: " + id);
    return worlds[static_cast<std::size_t>(it->second)];
  }

  void rebuild_index() {
    world_index_.clear();
    for (std::size_t i = 0; i < worlds.size(); ++i)
      world_index_[worlds[i].world_id] = static_cast<int>(i);
  }

  std::vector<const Episode*> split(const std::string& name) const {
    std::vector<const Episode*> out;
    for (const auto& e : episodes)
      if (e.split == name) out.push_back(&e);
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset: " + path);
    nlohmann::json header;
    header["type"] = "header";
    header["schema_version"] = kDatasetSchemaVersion;
    header["feature_dim"] = feature_dim;
    header["scene_classes"] = scene_classes;
    header["object_vocab"] = object_vocab;
    header["vocab"] = vocab.tokens;
    out << header.dump() << '\n';
    for (const auto& w : worlds) out << w.to_json().dump() << '\n';
    for (const auto& e : episodes) out << e.to_json().dump() << '\n';
  }

  static Dataset load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read dataset: " + path);
    Dataset d;
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
        throw std::runtime_error("dataset line " + std::to_string(lineno) +
                                 ": malformed record: " + ex.what());
      }
      try {
        std::string type = j.at("type").get<std::string>();
        if (type == "header") {
          int ver = j.at("schema_version").get<int>();
          if (ver != kDatasetSchemaVersion)
            throw std::runtime_error("schema version mismatch: got " +
                                     std::to_string(ver) + ", expected " +
                                     std::to_string(kDatasetSchemaVersion));
          d.feature_dim = j.at("feature_dim").get<int>();
          d.scene_classes = j.at("scene_classes").get<int>();
          d.object_vocab = j.at("object_vocab").get<int>();
          d.vocab = Vocab();
          for (const auto& t : j.at("vocab")) d.vocab.add(t.get<std::string>());
          have_header = true;
        } else if (type == "world") {
          if (!have_header) throw std::runtime_error("world record before header");
          d.worlds.push_back(NavGraph::from_json(j));
        } else if (type == "episode") {
          if (!have_header) throw std::runtime_error("episode record before header");
          d.episodes.push_back(Episode::from_json(j));
        } else {
          throw std::runtime_error("unknown record type: " + type);
        }
      } catch (const std::exception& ex) {
        throw std::runtime_error("dataset line " + std::to_string(lineno) + ": " +
                                 ex.what());
      }
    }
    if (!have_header)
      throw std::runtime_error("dataset line 1: missing header record");
    d.rebuild_index();
    return d;
  }

 private:
  std::map<std::string, int> world_index_;
};

}  // namespace nvem
