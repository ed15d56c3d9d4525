#pragma once

// Procedural generation of navigation worlds and templated episodes.
//
// Worlds grow by sequential node insertion. A configurable fraction of nodes
// host a *distractor pair*: two candidates whose owning views share a scene
// class and whose headings are 31-40 degrees apart, so an action phrase
// cannot separate them whenever both land in the same 90-degree bucket. A
// reference object planted in the gold candidate's neighbor views (never in
// the distractor's) is then the only disambiguating signal. A further
// fraction hosts *bucket competitors*: same-bucket candidates of different
// scene classes, which an agent can only resolve by matching the subject.
//
// Every candidate heading at a node keeps a >=31 degree gap from the others,
// so owning views are unique and same-class pairs exist exactly where
// planted.

#include "nvem/rng.hpp"
#include "nvem/world.hpp"

#include <array>
#include <set>
#include <string>
#include <vector>

namespace nvem {

struct WorldConfig {
  int nodes = 25;
  double mean_degree = 3.0;
  int feature_dim = 64;
  int scene_classes = 30;
  int object_vocab = 100;  // labels 1..object_vocab, 0 reserved null
  double distractor_fraction = 0.5;
  double competitor_fraction = 0.2;
  double feature_noise = 0.35;  // sigma of per-view Gaussian noise
  double edge_min = 2.5;
  double edge_max = 5.5;
  int decoys_min = 2;
  int decoys_max = 5;
  std::uint64_t codebook_seed = 20240101;  // global, shared by all worlds
};

// Unit-norm class prototype vectors; a pure function of (seed, shape) so
// every world in a dataset shares the same perceptual codebook.
inline Eigen::MatrixXd scene_codebook(std::uint64_t seed, int classes, int dim) {
  Rng rng(mix_seed(seed, 0xC0DEB00CULL));
  Eigen::MatrixXd cb(classes, dim);
  for (int c = 0; c < classes; ++c) {
    for (int f = 0; f < dim; ++f) cb(c, f) = rng.normal();
    cb.row(c).normalize();
  }
  return cb;
}

namespace detail {

inline constexpr double kMinAngleGap = 31.0 * kPi / 180.0;

inline bool heading_clear(const std::vector<double>& headings, double h,
                          double gap = kMinAngleGap) {
  for (double e : headings)
    if (std::abs(wrap_signed(h - e)) < gap) return false;
  return true;
}

inline const std::vector<std::string>& scene_noun_list() {
  static const std::vector<std::string> nouns = {
      "hallway",  "kitchen",   "bedroom", "bathroom",  "office",   "lobby",
      "library",  "attic",     "cellar",  "garage",    "pantry",   "studio",
      "balcony",  "corridor",  "stairwell", "doorway", "archway",  "courtyard",
      "terrace",  "workshop",  "laundry", "closet",    "foyer",    "den",
      "nursery",  "gym",       "sunroom", "porch",     "vestibule", "gallery"};
  return nouns;
}

inline const std::vector<std::string>& object_noun_list() {
  static const std::vector<std::string> nouns = {
      "mirror",   "lamp",     "sofa",     "table",    "chair",    "plant",
      "vase",     "clock",    "painting", "rug",      "shelf",    "cabinet",
      "television", "fireplace", "piano", "desk",     "stool",    "bench",
      "wardrobe", "dresser",  "curtain",  "window",   "door",     "basket",
      "mat",      "fan",      "heater",   "radiator", "statue",   "candle",
      "bottle",   "bowl",     "plate",    "cup",      "kettle",   "toaster",
      "oven",     "fridge",   "sink",     "faucet",   "towel",    "ladder",
      "broom",    "bucket",   "crate",    "barrel",   "trunk",    "suitcase",
      "bag",      "coat",     "hat",      "umbrella", "boot",     "shoe",
      "scarf",    "glove",    "pillow",   "blanket",  "quilt",    "mattress",
      "cradle",   "bookcase", "magazine", "newspaper", "globe",   "map",
      "poster",   "frame",    "trophy",   "medal",    "guitar",   "violin",
      "drum",     "flute",    "speaker",  "radio",    "phone",    "computer",
      "keyboard", "monitor",  "printer",  "scanner",  "router",   "camera",
      "tripod",   "easel",    "canvas",   "brush",    "palette",  "anvil",
      "hammer",   "wrench",   "saw",      "drill",    "toolbox",  "stove",
      "jar",      "tray",     "pot",      "pan"};
  return nouns;
}

}  // namespace detail

inline std::string scene_noun(int cls) {
  const auto& list = detail::scene_noun_list();
  if (cls < static_cast<int>(list.size())) return list[static_cast<std::size_t>(cls)];
  return "scene" + std::to_string(cls);
}

inline std::string object_noun(int label) {  // labels start at 1
  const auto& list = detail::object_noun_list();
  int i = label - 1;
  if (i >= 0 && i < static_cast<int>(list.size()))
    return list[static_cast<std::size_t>(i)];
  return "object" + std::to_string(label);
}

inline const std::array<std::vector<std::string>, 4>& action_phrases() {
  static const std::array<std::vector<std::string>, 4> phrases = {
      std::vector<std::string>{"go", "straight", "to"},
      std::vector<std::string>{"turn", "left", "to"},
      std::vector<std::string>{"turn", "around", "to"},
      std::vector<std::string>{"turn", "right", "to"}};
  return phrases;
}

// Quantizes a relative heading into {0: forward, 1: left, 2: back, 3: right}.
// Positive relative headings are counter-clockwise ("left").
inline int action_bucket(double rel_heading) {
  int b = static_cast<int>(std::lround(rel_heading / (kPi / 2.0)));
  return ((b % 4) + 4) % 4;
}

inline Vocab build_vocab(int scene_classes, int object_vocab) {
  Vocab v = Vocab::with_reserved();
  for (const char* w : {"go", "straight", "to", "turn", "left", "right", "around",
                        "the", "of", "then", "wait", "there"})
    v.add(w);
  for (int c = 0; c < scene_classes; ++c) v.add(scene_noun(c));
  for (int l = 1; l <= object_vocab; ++l) v.add(object_noun(l));
  return v;
}

// ---- world generation ---------------------------------------------------------

inline NavGraph generate_world(std::uint64_t seed, const WorldConfig& cfg,
                               const std::string& world_id) {
  int n = cfg.nodes;
  int plants_target = static_cast<int>(std::lround(cfg.distractor_fraction * n));
  int comp_target = static_cast<int>(std::lround(cfg.competitor_fraction * n));
  if (n < 2 || plants_target + comp_target + 2 > n)
    throw std::invalid_argument(
        "world config infeasible: distractor/competitor fractions leave too few "
        "plain nodes");
  if (cfg.scene_classes < 8)
    throw std::invalid_argument("world config infeasible: need >= 8 scene classes");

  Rng rng(mix_seed(seed, fnv1a("world")));
  NavGraph g;
  g.world_id = world_id;
  g.nodes.push_back({0, 0.0, 0.0});
  std::vector<std::vector<int>> adj(1);
  std::vector<std::vector<double>> headings(1);  // candidate headings per node
  std::vector<bool> is_host(1, false);
  std::vector<DistractorPlant> plants;

  auto add_edge = [&](int a, int b) {
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
    headings[static_cast<std::size_t>(a)].push_back(g.heading_to(a, b));
    headings[static_cast<std::size_t>(b)].push_back(g.heading_to(b, a));
  };

  auto min_node_dist = [&](double x, double y) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& nd : g.nodes)
      best = std::min(best, std::hypot(nd.x - x, nd.y - y));
    return best;
  };

  // Inserts a node attached to `anchor`. For paired kinds the heading sits
  // 31-40 degrees off the anchor's edge toward `beside`.
  auto try_insert = [&](int anchor, int beside) -> int {
    for (int attempt = 0; attempt < 60; ++attempt) {
      double h;
      if (beside >= 0) {
        double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        h = wrap_heading(g.heading_to(anchor, beside) +
                         sign * rng.uniform(detail::kMinAngleGap, 40.0 * kPi / 180.0));
      } else {
        h = rng.uniform(0.0, 2.0 * kPi);
      }
      if (!detail::heading_clear(headings[static_cast<std::size_t>(anchor)], h))
        continue;
      double dist = rng.uniform(cfg.edge_min, cfg.edge_max);
      double x = g.nodes[static_cast<std::size_t>(anchor)].x + dist * std::cos(h);
      double y = g.nodes[static_cast<std::size_t>(anchor)].y + dist * std::sin(h);
      if (min_node_dist(x, y) < 2.0) continue;
      int id = g.num_nodes();
      g.nodes.push_back({id, x, y});
      adj.emplace_back();
      headings.emplace_back();
      is_host.push_back(false);
      add_edge(anchor, id);
      return id;
    }
    return -1;
  };

  auto shuffled = [&](int count) {
    std::vector<int> order(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int i = count - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    return order;
  };

  // Sweeps every (anchor, beside-edge) combination; anchors with degree >= 2
  // first, so pairs stay reachable mid-path rather than only at endpoints.
  auto insert_paired = [&](bool plant) -> int {
    std::vector<int> anchors;
    for (int u = 0; u < g.num_nodes(); ++u) {
      if (adj[static_cast<std::size_t>(u)].empty()) continue;
      if (plant && is_host[static_cast<std::size_t>(u)]) continue;
      anchors.push_back(u);
    }
    std::vector<int> order = shuffled(static_cast<int>(anchors.size()));
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
      auto deg = [&](int idx) {
        return adj[static_cast<std::size_t>(anchors[static_cast<std::size_t>(idx)])].size();
      };
      return (deg(i) >= 2) > (deg(j) >= 2);
    });
    for (int oi : order) {
      int a = anchors[static_cast<std::size_t>(oi)];
      const auto na = adj[static_cast<std::size_t>(a)];  // copy: adj mutates on insert
      for (int ei : shuffled(static_cast<int>(na.size()))) {
        int x = na[static_cast<std::size_t>(ei)];
        int placed = try_insert(a, x);
        if (placed < 0) continue;
        if (plant) {
          is_host[static_cast<std::size_t>(a)] = true;
          DistractorPlant p;
          p.node = a;
          p.gold_target = x;
          p.distractor_target = placed;
          plants.push_back(p);
        }
        return placed;
      }
    }
    return -1;
  };

  int plants_left = plants_target, comp_left = comp_target;
  for (int i = 1; i < n; ++i) {
    int remaining = n - i;
    bool forced = plants_left + comp_left >= remaining;

    enum { kPlant, kComp, kPlain } kind = kPlain;
    double r = rng.uniform() * static_cast<double>(remaining);
    if (plants_left > 0 && (forced || r < plants_left))
      kind = kPlant;
    else if (comp_left > 0 && (forced || r < plants_left + comp_left))
      kind = kComp;

    int placed = -1;
    if (kind == kPlant || kind == kComp) {
      placed = insert_paired(kind == kPlant);
      if (placed >= 0) {
        if (kind == kPlant)
          --plants_left;
        else
          --comp_left;
      } else if (forced) {
        throw std::runtime_error(
            "world generation failed: could not satisfy distractor/competitor "
            "fraction");
      }
    }
    if (placed < 0) {
      // plain node; a failed paired insertion retries on a later slot
      for (int t = 0; t < 120 && placed < 0; ++t) {
        int a = rng.uniform_int(g.num_nodes());
        placed = try_insert(a, -1);
      }
    }
    if (placed < 0)
      throw std::runtime_error("world generation failed: no feasible node placement");
  }
  if (plants_left > 0 || comp_left > 0)
    throw std::runtime_error(
        "world generation failed: could not satisfy distractor/competitor fraction");

  // extra edges toward the target mean degree, respecting the angle gap
  {
    std::vector<std::pair<int, int>> pairs;
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) {
        if (std::find(adj[static_cast<std::size_t>(a)].begin(),
                      adj[static_cast<std::size_t>(a)].end(),
                      b) != adj[static_cast<std::size_t>(a)].end())
          continue;
        double d = g.euclidean(a, b);
        if (d < cfg.edge_min || d > cfg.edge_max) continue;
        pairs.emplace_back(a, b);
      }
    // deterministic shuffle
    for (int i = static_cast<int>(pairs.size()) - 1; i > 0; --i)
      std::swap(pairs[static_cast<std::size_t>(i)],
                pairs[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    int edge_count = 0;
    for (const auto& lst : adj) edge_count += static_cast<int>(lst.size());
    for (const auto& [a, b] : pairs) {
      if (edge_count >= static_cast<int>(cfg.mean_degree * n)) break;
      if (!detail::heading_clear(headings[static_cast<std::size_t>(a)],
                                 g.heading_to(a, b)) ||
          !detail::heading_clear(headings[static_cast<std::size_t>(b)],
                                 g.heading_to(b, a)))
        continue;
      add_edge(a, b);
      edge_count += 2;
    }
  }
  g.adj = adj;
  for (auto& lst : g.adj) std::sort(lst.begin(), lst.end());

  // scene classes per column; vertical coherence across the three rows
  g.view_classes.assign(static_cast<std::size_t>(n),
                        std::vector<int>(kHeadingCols, 0));
  for (int u = 0; u < n; ++u)
    for (int c = 0; c < kHeadingCols; ++c)
      g.view_classes[static_cast<std::size_t>(u)][static_cast<std::size_t>(c)] =
          rng.uniform_int(cfg.scene_classes);

  for (auto& p : plants) {
    p.subject_class = rng.uniform_int(cfg.scene_classes);
    int cg = heading_col(g.heading_to(p.node, p.gold_target));
    int cd = heading_col(g.heading_to(p.node, p.distractor_target));
    auto& cls = g.view_classes[static_cast<std::size_t>(p.node)];
    cls[static_cast<std::size_t>(cg)] = p.subject_class;
    cls[static_cast<std::size_t>(cd)] = p.subject_class;
    for (int c = 0; c < kHeadingCols; ++c) {
      if (c == cg || c == cd) continue;
      while (cls[static_cast<std::size_t>(c)] == p.subject_class)
        cls[static_cast<std::size_t>(c)] = rng.uniform_int(cfg.scene_classes);
    }
  }

  // any two same-bucketable candidates with equal classes must be a plant;
  // force every other candidate pair at a node onto different classes
  for (int u = 0; u < n; ++u) {
    auto& cls = g.view_classes[static_cast<std::size_t>(u)];
    const auto& nbrs = g.adj[static_cast<std::size_t>(u)];
    const DistractorPlant* plant = nullptr;
    for (const auto& p : plants)
      if (p.node == u) plant = &p;
    std::vector<int> cand_cols;
    for (int v : nbrs) cand_cols.push_back(heading_col(g.heading_to(u, v)));
    for (std::size_t i = 0; i < cand_cols.size(); ++i)
      for (std::size_t j = i + 1; j < cand_cols.size(); ++j) {
        int ci = cand_cols[i], cj = cand_cols[j];
        if (ci == cj) continue;  // impossible by the angle gap, kept for safety
        if (plant) {
          int cg = heading_col(g.heading_to(u, plant->gold_target));
          int cd = heading_col(g.heading_to(u, plant->distractor_target));
          if ((ci == cg && cj == cd) || (ci == cd && cj == cg)) continue;
        }
        while (cls[static_cast<std::size_t>(ci)] == cls[static_cast<std::size_t>(cj)])
          cls[static_cast<std::size_t>(cj)] = rng.uniform_int(cfg.scene_classes);
      }
  }

  // features: class prototype plus per-view Gaussian noise
  Eigen::MatrixXd codebook =
      scene_codebook(cfg.codebook_seed, cfg.scene_classes, cfg.feature_dim);
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
      view.feature.resize(cfg.feature_dim);
      for (int f = 0; f < cfg.feature_dim; ++f)
        view.feature[f] =
            codebook(view.scene_class, f) + cfg.feature_noise * rng.normal();
    }
  }

  // reference objects, then decoys (ref labels excluded panorama-wide at hosts)
  std::vector<std::set<int>> excluded(static_cast<std::size_t>(n));
  for (auto& p : plants) {
    p.ref_label = 1 + rng.uniform_int(cfg.object_vocab);
    int cg = heading_col(g.heading_to(p.node, p.gold_target));
    double hd = g.heading_to(p.node, p.distractor_target);
    int left = (cg + 1) % kHeadingCols, right = (cg + 11) % kHeadingCols;
    double dl = std::abs(wrap_signed(left * kViewStep - hd));
    double dr = std::abs(wrap_signed(right * kViewStep - hd));
    int away = dl > dr ? left : right;
    p.ref_view = view_slot(away, 1);
    View& view = g.panoramas[static_cast<std::size_t>(p.node)]
                            [static_cast<std::size_t>(p.ref_view)];
    view.objects.push_back(
        {p.ref_label, rng.uniform(0.75, 1.0), view.orientation});
    excluded[static_cast<std::size_t>(p.node)].insert(p.ref_label);
  }
  for (int u = 0; u < n; ++u) {
    const auto& excl = excluded[static_cast<std::size_t>(u)];
    for (int s = 0; s < kNumViews; ++s) {
      View& view = g.panoramas[static_cast<std::size_t>(u)][static_cast<std::size_t>(s)];
      int count = cfg.decoys_min + rng.uniform_int(cfg.decoys_max - cfg.decoys_min + 1);
      for (int k = 0; k < count; ++k) {
        int label = 1 + rng.uniform_int(cfg.object_vocab);
        while (excl.count(label)) label = 1 + rng.uniform_int(cfg.object_vocab);
        view.objects.push_back({label, rng.uniform(0.05, 0.6), view.orientation});
      }
    }
  }

  g.plants = std::move(plants);
  g.finalize();
  return g;
}

// ---- episode generation ----------------------------------------------------------

struct EpisodeConfig {
  int hops_min = 3;
  int hops_max = 6;
  bool concat_paths = false;  // concatenate two segments (R4R-like)
  int max_tokens = 60;
  int max_attempts = 400;
};

namespace detail {

struct HopRender {
  std::vector<std::string> words;
  HopMeta meta;
};

// Renders one hop clause; returns nothing if the path is unusable at this
// hop (the gold candidate is the unreferenced member of a planted pair).
inline std::optional<HopRender> render_hop(const NavGraph& g, int u, int x,
                                           double agent_heading, int token_base) {
  for (const auto& p : g.plants)
    if (p.node == u && p.distractor_target == x) return std::nullopt;

  HopRender out;
  double hx = g.heading_to(u, x);
  int bucket = action_bucket(wrap_signed(hx - agent_heading));
  const auto& aw = action_phrases()[static_cast<std::size_t>(bucket)];
  int pos = token_base;
  out.meta.action = {pos, pos + static_cast<int>(aw.size())};
  for (const auto& w : aw) out.words.push_back(w);
  pos += static_cast<int>(aw.size());

  int subject_class = g.view_classes[static_cast<std::size_t>(u)]
                                    [static_cast<std::size_t>(heading_col(hx))];
  out.meta.subject = {pos, pos + 2};
  out.words.push_back("the");
  out.words.push_back(scene_noun(subject_class));
  pos += 2;

  if (const DistractorPlant* p = g.plant_at(u, x)) {
    double ref_heading = slot_orientation(p->ref_view).heading;
    const char* rel = wrap_signed(hx - ref_heading) > 0 ? "left" : "right";
    out.meta.reference = TokenSpan{pos, pos + 6};
    for (const std::string& w :
         {std::string("to"), std::string("the"), std::string(rel),
          std::string("of"), std::string("the"), object_noun(p->ref_label)})
      out.words.push_back(w);
    pos += 6;
    out.meta.distractor = true;
    double hd = g.heading_to(u, p->distractor_target);
    out.meta.ambiguous = action_bucket(wrap_signed(hd - agent_heading)) == bucket;
  }
  return out;
}

}  // namespace detail

inline Episode generate_episode(const NavGraph& g, Rng& rng, const EpisodeConfig& cfg,
                                const Vocab& vocab, const std::string& split,
                                bool force_distractor = false) {
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    int start = rng.uniform_int(g.num_nodes());
    std::vector<int> goals;
    for (int t = 0; t < g.num_nodes(); ++t) {
      if (t == start) continue;
      int hops = static_cast<int>(g.shortest_path(start, t).size()) - 1;
      if (hops >= cfg.hops_min && hops <= cfg.hops_max) goals.push_back(t);
    }
    if (goals.empty()) continue;
    int goal = goals[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(goals.size())))];
    std::vector<int> path = g.shortest_path(start, goal);

    if (cfg.concat_paths) {
      std::vector<int> goals2;
      for (int t = 0; t < g.num_nodes(); ++t) {
        if (t == goal) continue;
        int hops = static_cast<int>(g.shortest_path(goal, t).size()) - 1;
        if (hops < cfg.hops_min || hops > cfg.hops_max) continue;
        auto seg = g.shortest_path(goal, t);
        bool clean = true;
        for (std::size_t i = 1; i < seg.size(); ++i)
          if (std::find(path.begin(), path.end(), seg[i]) != path.end()) clean = false;
        if (clean) goals2.push_back(t);
      }
      if (goals2.empty()) continue;
      int goal2 = goals2[static_cast<std::size_t>(
          rng.uniform_int(static_cast<int>(goals2.size())))];
      auto seg = g.shortest_path(goal, goal2);
      path.insert(path.end(), seg.begin() + 1, seg.end());
      goal = goal2;
    }

    std::vector<std::string> words;
    std::vector<HopMeta> meta;
    double heading = 0.0;
    bool usable = true;
    for (std::size_t i = 0; i + 1 < path.size() && usable; ++i) {
      int u = path[i], x = path[i + 1];
      auto hop = detail::render_hop(g, u, x, heading, static_cast<int>(words.size()));
      if (!hop) {
        usable = false;
        break;
      }
      words.insert(words.end(), hop->words.begin(), hop->words.end());
      meta.push_back(hop->meta);
      words.push_back("then");
      heading = g.heading_to(u, x);
    }
    if (!usable) continue;
    words.push_back("wait");
    words.push_back("there");

    std::vector<int> tokens;
    for (const auto& w : words) tokens.push_back(vocab.id(w));
    tokens.push_back(Vocab::kEos);
    if (static_cast<int>(tokens.size()) > cfg.max_tokens) continue;

    if (force_distractor) {
      bool ok = false;
      for (const auto& m : meta)
        if (m.distractor && m.ambiguous) ok = true;
      if (!ok) continue;
    }

    Episode e;
    e.world_id = g.world_id;
    e.split = split;
    e.start_node = start;
    e.goal_node = goal;
    e.gold_path = std::move(path);
    e.tokens = std::move(tokens);
    e.meta = std::move(meta);
    return e;
  }
  throw std::runtime_error("generate_episode: no usable episode after max attempts");
}

// ---- dataset assembly -----------------------------------------------------------

struct DataConfig {
  WorldConfig world;
  EpisodeConfig episode;
  int train_worlds = 40;
  int unseen_worlds = 8;
  int train_episodes = 3000;
  int val_seen_episodes = 300;
  int val_unseen_episodes = 300;
  int val_distractor_episodes = 300;
  std::uint64_t seed = 1;
};

inline Dataset build_dataset(const DataConfig& cfg) {
  Dataset d;
  d.feature_dim = cfg.world.feature_dim;
  d.scene_classes = cfg.world.scene_classes;
  d.object_vocab = cfg.world.object_vocab;
  d.vocab = build_vocab(cfg.world.scene_classes, cfg.world.object_vocab);

  char buf[64];
  for (int i = 0; i < cfg.train_worlds; ++i) {
    std::snprintf(buf, sizeof buf, "train_w%03d", i);
    d.worlds.push_back(generate_world(mix_seed(cfg.seed, 10000 + i), cfg.world, buf));
  }
  for (int i = 0; i < cfg.unseen_worlds; ++i) {
    std::snprintf(buf, sizeof buf, "unseen_w%03d", i);
    d.worlds.push_back(generate_world(mix_seed(cfg.seed, 20000 + i), cfg.world, buf));
  }
  d.rebuild_index();

  Rng rng(mix_seed(cfg.seed, fnv1a("episodes")));
  auto emit = [&](const std::string& split, int count, int world_lo, int world_hi,
                  bool force_distractor) {
    for (int k = 0; k < count; ++k) {
      const NavGraph& g = d.worlds[static_cast<std::size_t>(
          world_lo + rng.uniform_int(world_hi - world_lo))];
      Episode e = generate_episode(g, rng, cfg.episode, d.vocab, split, force_distractor);
      std::snprintf(buf, sizeof buf, "%s_e%05d", split.c_str(), k);
      e.episode_id = buf;
      d.episodes.push_back(std::move(e));
    }
  };
  emit("train", cfg.train_episodes, 0, cfg.train_worlds, false);
  emit("val_seen", cfg.val_seen_episodes, 0, cfg.train_worlds, false);
  emit("val_unseen", cfg.val_unseen_episodes, cfg.train_worlds,
       cfg.train_worlds + cfg.unseen_worlds, false);
  emit("val_unseen_distractor", cfg.val_distractor_episodes, cfg.train_worlds,
       cfg.train_worlds + cfg.unseen_worlds, true);
  return d;
}

}  // namespace nvem
