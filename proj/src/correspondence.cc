#include "ptzcalib/correspondence.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

namespace ptzcalib {

using json = nlohmann::json;

const TrackElement* Track::Find(ViewId view) const {
  for (const TrackElement& e : elements) {
    if (e.view_id == view) {
      return &e;
    }
  }
  return nullptr;
}

void MatchGraph::AddView(const ViewInfo& view) {
  if (view.width <= 0 || view.height <= 0) {
    throw std::invalid_argument("view dimensions must be positive");
  }
  views_[view.id] = view;
  keypoints_[view.id];
}

int MatchGraph::AddKeypoint(ViewId view, const Eigen::Vector2d& position) {
  if (!HasView(view)) {
    throw std::invalid_argument("unknown view " + std::to_string(view));
  }
  auto& index = keypoint_index_[view];
  const auto key = std::make_pair(position.x(), position.y());
  const auto it = index.find(key);
  if (it != index.end()) {
    return it->second;
  }
  auto& list = keypoints_[view];
  list.push_back(position);
  const int id = static_cast<int>(list.size()) - 1;
  index.emplace(key, id);
  return id;
}

const std::vector<Eigen::Vector2d>& MatchGraph::Keypoints(ViewId view) const {
  return keypoints_.at(view);
}

void MatchGraph::AddMatchSet(MatchSet match_set) {
  if (match_set.view_a == match_set.view_b) {
    throw std::invalid_argument("match set connects a view to itself");
  }
  if (!HasView(match_set.view_a) || !HasView(match_set.view_b)) {
    throw std::invalid_argument("match set references an unknown view");
  }
  const auto key = std::minmax(match_set.view_a, match_set.view_b);
  if (edge_index_.count(key) > 0) {
    throw std::invalid_argument("duplicate match set between views " +
                                std::to_string(key.first) + " and " +
                                std::to_string(key.second));
  }
  const int na = static_cast<int>(keypoints_.at(match_set.view_a).size());
  const int nb = static_cast<int>(keypoints_.at(match_set.view_b).size());
  std::set<std::pair<int, int>> seen;
  std::vector<std::pair<int, int>> unique_pairs;
  unique_pairs.reserve(match_set.pairs.size());
  for (const auto& [ia, ib] : match_set.pairs) {
    if (ia < 0 || ia >= na || ib < 0 || ib >= nb) {
      throw std::invalid_argument("match pair references a missing keypoint");
    }
    if (seen.insert({ia, ib}).second) {
      unique_pairs.emplace_back(ia, ib);
    }
  }
  match_set.pairs = std::move(unique_pairs);
  const size_t index = match_sets_.size();
  adjacency_[match_set.view_a].emplace_back(match_set.view_b, index);
  adjacency_[match_set.view_b].emplace_back(match_set.view_a, index);
  edge_index_.emplace(key, index);
  match_sets_.push_back(std::move(match_set));
}

const MatchSet* MatchGraph::Find(ViewId a, ViewId b) const {
  const auto it = edge_index_.find(std::minmax(a, b));
  return it == edge_index_.end() ? nullptr : &match_sets_[it->second];
}

int MatchGraph::Weight(ViewId a, ViewId b) const {
  const MatchSet* m = Find(a, b);
  return m == nullptr ? 0 : static_cast<int>(m->pairs.size());
}

int MatchGraph::TotalWeight(ViewId view) const {
  const auto it = adjacency_.find(view);
  if (it == adjacency_.end()) {
    return 0;
  }
  int total = 0;
  for (const auto& [other, index] : it->second) {
    total += static_cast<int>(match_sets_[index].pairs.size());
  }
  return total;
}

std::vector<ViewId> MatchGraph::Neighbors(ViewId view) const {
  std::vector<ViewId> out;
  const auto it = adjacency_.find(view);
  if (it != adjacency_.end()) {
    for (const auto& [other, index] : it->second) {
      out.push_back(other);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

MatchGraph MatchGraph::WithoutEdges() const {
  MatchGraph out;
  out.views_ = views_;
  out.keypoints_ = keypoints_;
  out.keypoint_index_ = keypoint_index_;
  return out;
}

namespace {

// Similarity that moves the centroid to the origin and the mean distance to
// sqrt(2).
Eigen::Matrix3d NormalizingTransform(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pts) {
    centroid += p;
  }
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) {
    mean_dist += (p - centroid).norm();
  }
  mean_dist /= static_cast<double>(pts.size());
  const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d t;
  t << s, 0.0, -s * centroid.x(), 0.0, s, -s * centroid.y(), 0.0, 0.0, 1.0;
  return t;
}

bool NearlyCollinear(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                     const Eigen::Vector2d& c) {
  const Eigen::Vector2d u = b - a;
  const Eigen::Vector2d v = c - a;
  const double cross = std::abs(u.x() * v.y() - u.y() * v.x());
  const double scale = std::max({u.squaredNorm(), v.squaredNorm(), 1e-12});
  return cross < 1e-6 * scale;
}

bool DegenerateSample(const std::vector<Eigen::Vector2d>& pts) {
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      for (int k = j + 1; k < 4; ++k) {
        if (NearlyCollinear(pts[i], pts[j], pts[k])) {
          return true;
        }
      }
    }
  }
  return false;
}

Eigen::Vector2d Transfer(const Eigen::Matrix3d& h, const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = h * p.homogeneous();
  return q.hnormalized();
}

uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Scored {
  Eigen::Matrix3d h;
  Eigen::Matrix3d h_inv;
  std::vector<int> inliers;
};

Scored Score(const Eigen::Matrix3d& h, const std::vector<Eigen::Vector2d>& a,
             const std::vector<Eigen::Vector2d>& b, double threshold) {
  Scored s;
  s.h = h;
  s.h_inv = h.inverse();
  const double t2 = threshold * threshold;
  for (size_t i = 0; i < a.size(); ++i) {
    const double fwd = (Transfer(s.h, a[i]) - b[i]).squaredNorm();
    const double bwd = (Transfer(s.h_inv, b[i]) - a[i]).squaredNorm();
    const double e2 = 0.5 * (fwd + bwd);
    if (std::isfinite(e2) && e2 <= t2) {
      s.inliers.push_back(static_cast<int>(i));
    }
  }
  return s;
}

size_t CountInliers(const Eigen::Matrix3d& h, const std::vector<Eigen::Vector2d>& a,
                    const std::vector<Eigen::Vector2d>& b, double threshold) {
  const Eigen::Matrix3d h_inv = h.inverse();
  const double t2 = 2.0 * threshold * threshold;
  size_t count = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double e2 = (Transfer(h, a[i]) - b[i]).squaredNorm() +
                      (Transfer(h_inv, b[i]) - a[i]).squaredNorm();
    count += std::isfinite(e2) && e2 <= t2;
  }
  return count;
}

}  // namespace

std::optional<Eigen::Matrix3d> FitHomography(
    const std::vector<Eigen::Vector2d>& from,
    const std::vector<Eigen::Vector2d>& to) {
  if (from.size() != to.size() || from.size() < 4) {
    return std::nullopt;
  }
  const Eigen::Matrix3d t_from = NormalizingTransform(from);
  const Eigen::Matrix3d t_to = NormalizingTransform(to);
  const int n = static_cast<int>(from.size());
  Eigen::MatrixXd a(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d p = (t_from * from[i].homogeneous()).hnormalized();
    const Eigen::Vector2d q = (t_to * to[i].homogeneous()).hnormalized();
    a.row(2 * i) << 0.0, 0.0, 0.0, -p.x(), -p.y(), -1.0, q.y() * p.x(),
        q.y() * p.y(), q.y();
    a.row(2 * i + 1) << p.x(), p.y(), 1.0, 0.0, 0.0, 0.0, -q.x() * p.x(),
        -q.x() * p.y(), -q.x();
  }
  Eigen::Matrix<double, 9, 1> v;
  bool solved = false;
  if (n == 4) {
    // Minimal case with h33 = 1; the SVD path covers h33 near zero.
    const Eigen::Matrix<double, 8, 8> m = a.leftCols(8);
    const Eigen::PartialPivLU<Eigen::Matrix<double, 8, 8>> lu(m);
    const Eigen::Matrix<double, 8, 1> x = lu.solve(-a.col(8));
    if (x.allFinite() && std::abs(lu.determinant()) > 1e-12 && x.norm() < 1e6) {
      v << x, 1.0;
      solved = true;
    }
  }
  if (!solved && n == 4) {
    // Pad to a square system so the null vector is the last right-singular
    // vector.
    Eigen::Matrix<double, 9, 9> square = Eigen::Matrix<double, 9, 9>::Zero();
    square.topRows(8) = a;
    const Eigen::JacobiSVD<Eigen::Matrix<double, 9, 9>> svd(square,
                                                            Eigen::ComputeFullV);
    v = svd.matrixV().col(8);
  } else if (!solved) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    v = svd.matrixV().col(8);
  }
  Eigen::Matrix3d h_norm;
  h_norm << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  Eigen::Matrix3d h = t_to.inverse() * h_norm * t_from;
  if (!h.allFinite() || std::abs(h.determinant()) < 1e-15 * std::pow(h.norm(), 3)) {
    return std::nullopt;
  }
  return h / h.norm();
}

double SymmetricTransferError(const Eigen::Matrix3d& h,
                              const Eigen::Vector2d& a,
                              const Eigen::Vector2d& b) {
  const double fwd = (Transfer(h, a) - b).squaredNorm();
  const double bwd = (Transfer(h.inverse(), b) - a).squaredNorm();
  return std::sqrt(0.5 * (fwd + bwd));
}

std::optional<MatchSet> VerifyHomography(const MatchGraph& graph,
                                         const MatchSet& match_set,
                                         const RansacOptions& options) {
  const size_t n = match_set.pairs.size();
  if (n < 4 || static_cast<int>(n) < options.min_inliers) {
    return std::nullopt;
  }
  const auto& kps_a = graph.Keypoints(match_set.view_a);
  const auto& kps_b = graph.Keypoints(match_set.view_b);
  std::vector<Eigen::Vector2d> a(n);
  std::vector<Eigen::Vector2d> b(n);
  for (size_t i = 0; i < n; ++i) {
    a[i] = kps_a[match_set.pairs[i].first];
    b[i] = kps_b[match_set.pairs[i].second];
  }

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  std::optional<Scored> best;
  double needed = options.max_iterations;
  std::vector<Eigen::Vector2d> sample_a(4);
  std::vector<Eigen::Vector2d> sample_b(4);
  for (int iter = 0; iter < options.max_iterations && iter < needed; ++iter) {
    std::array<size_t, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      bool fresh = false;
      while (!fresh) {
        idx[k] = pick(rng);
        fresh = std::find(idx.begin(), idx.begin() + k, idx[k]) ==
                idx.begin() + k;
      }
      sample_a[k] = a[idx[k]];
      sample_b[k] = b[idx[k]];
    }
    if (DegenerateSample(sample_a) || DegenerateSample(sample_b)) {
      continue;
    }
    const auto h = FitHomography(sample_a, sample_b);
    if (!h) {
      continue;
    }
    if (best && CountInliers(*h, a, b, options.threshold_px) <= best->inliers.size()) {
      continue;
    }
    Scored scored = Score(*h, a, b, options.threshold_px);
    if (!best || scored.inliers.size() > best->inliers.size()) {
      best = std::move(scored);
      const double w = static_cast<double>(best->inliers.size()) / n;
      const double p_good = std::pow(w, 4);
      if (p_good >= 1.0) {
        needed = 0.0;
      } else if (p_good > 0.0) {
        needed = std::log(1.0 - options.confidence) / std::log(1.0 - p_good);
      }
    }
  }
  if (!best || best->inliers.size() < 4) {
    return std::nullopt;
  }

  // Refit on the consensus set while it keeps growing.
  for (int round = 0; round < 5; ++round) {
    std::vector<Eigen::Vector2d> in_a;
    std::vector<Eigen::Vector2d> in_b;
    for (const int i : best->inliers) {
      in_a.push_back(a[i]);
      in_b.push_back(b[i]);
    }
    const auto h = FitHomography(in_a, in_b);
    if (!h) {
      break;
    }
    Scored refit = Score(*h, a, b, options.threshold_px);
    if (refit.inliers.size() < best->inliers.size()) {
      break;
    }
    const bool same = refit.inliers == best->inliers;
    best = std::move(refit);
    if (same) {
      break;
    }
  }

  if (static_cast<int>(best->inliers.size()) < options.min_inliers) {
    return std::nullopt;
  }
  MatchSet out;
  out.view_a = match_set.view_a;
  out.view_b = match_set.view_b;
  out.homography = best->h;
  for (const int i : best->inliers) {
    out.pairs.push_back(match_set.pairs[i]);
  }
  return out;
}

MatchGraph VerifyGraph(const MatchGraph& graph, const RansacOptions& options) {
  MatchGraph out = graph.WithoutEdges();
  for (const MatchSet& m : graph.MatchSets()) {
    RansacOptions edge_options = options;
    const auto [lo, hi] = std::minmax(m.view_a, m.view_b);
    edge_options.seed = SplitMix64(options.seed ^
                                   SplitMix64((static_cast<uint64_t>(lo) << 32) ^
                                              static_cast<uint64_t>(hi)));
    auto verified = VerifyHomography(graph, m, edge_options);
    if (verified) {
      out.AddMatchSet(std::move(*verified));
    }
  }
  return out;
}

namespace {

class UnionFind {
 public:
  explicit UnionFind(size_t n) : parent_(n), rank_(n, 0) {
    std::iota(parent_.begin(), parent_.end(), size_t{0});
  }

  size_t Find(size_t x) {
    size_t root = x;
    while (parent_[root] != root) {
      root = parent_[root];
    }
    while (parent_[x] != root) {
      const size_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  void Union(size_t a, size_t b) {
    a = Find(a);
    b = Find(b);
    if (a == b) {
      return;
    }
    if (rank_[a] < rank_[b]) {
      std::swap(a, b);
    }
    parent_[b] = a;
    if (rank_[a] == rank_[b]) {
      ++rank_[a];
    }
  }

 private:
  std::vector<size_t> parent_;
  std::vector<int> rank_;
};

}  // namespace

std::vector<Track> BuildTracks(const MatchGraph& graph) {
  std::map<ViewId, size_t> offset;
  std::vector<std::pair<ViewId, int>> node_of;
  for (const auto& [id, view] : graph.Views()) {
    offset[id] = node_of.size();
    const int count = static_cast<int>(graph.Keypoints(id).size());
    for (int k = 0; k < count; ++k) {
      node_of.emplace_back(id, k);
    }
  }
  UnionFind uf(node_of.size());
  std::vector<char> matched(node_of.size(), 0);
  for (const MatchSet& m : graph.MatchSets()) {
    for (const auto& [ia, ib] : m.pairs) {
      const size_t na = offset.at(m.view_a) + ia;
      const size_t nb = offset.at(m.view_b) + ib;
      matched[na] = matched[nb] = 1;
      uf.Union(na, nb);
    }
  }

  // Components in order of their smallest node, elements in node order.
  std::map<size_t, size_t> component_of_root;
  std::vector<Track> tracks;
  for (size_t node = 0; node < node_of.size(); ++node) {
    if (!matched[node]) {
      continue;
    }
    const size_t root = uf.Find(node);
    auto [it, inserted] = component_of_root.emplace(root, tracks.size());
    if (inserted) {
      Track t;
      t.id = static_cast<TrackId>(tracks.size());
      tracks.push_back(std::move(t));
    }
    Track& track = tracks[it->second];
    const auto [view, kp] = node_of[node];
    if (!track.elements.empty() && track.elements.back().view_id == view) {
      track.conflicted = true;
    }
    track.elements.push_back({view, kp, graph.Keypoints(view)[kp]});
  }
  return tracks;
}

std::vector<Track> FilterTracks(const std::vector<Track>& tracks,
                                size_t min_track_len) {
  std::vector<Track> out;
  for (const Track& t : tracks) {
    if (!t.conflicted && t.Length() >= min_track_len) {
      out.push_back(t);
    }
  }
  return out;
}

namespace {

double CoordinateAt(const json& pair, size_t index, size_t record,
                    size_t pair_index) {
  const json& v = pair.at(index);
  if (!v.is_number()) {
    throw ParseError("match record " + std::to_string(record) + ", pair " +
                     std::to_string(pair_index) + ": coordinate " +
                     v.dump() + " is not a finite number");
  }
  const double x = v.get<double>();
  if (!std::isfinite(x)) {
    throw ParseError("match record " + std::to_string(record) + ", pair " +
                     std::to_string(pair_index) + ": non-finite coordinate");
  }
  return x;
}

}  // namespace

MatchGraph ParseMatches(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("match file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("views") || !doc["views"].is_array()) {
    throw ParseError("match file: missing 'views' array");
  }
  MatchGraph graph;
  size_t view_record = 0;
  for (const json& v : doc["views"]) {
    try {
      graph.AddView({v.at("id").get<ViewId>(), v.at("width").get<int>(),
                     v.at("height").get<int>()});
    } catch (const std::exception& e) {
      throw ParseError("view record " + std::to_string(view_record) + ": " +
                       e.what());
    }
    ++view_record;
  }
  if (!doc.contains("matches")) {
    return graph;
  }
  if (!doc["matches"].is_array()) {
    throw ParseError("match file: 'matches' is not an array");
  }
  size_t record = 0;
  for (const json& m : doc["matches"]) {
    const auto context = "match record " + std::to_string(record);
    if (!m.is_object() || !m.contains("view_a") || !m.contains("view_b") ||
        !m.contains("pairs") || !m["pairs"].is_array() ||
        !m["view_a"].is_number_integer() || !m["view_b"].is_number_integer()) {
      throw ParseError(context + ": expected {view_a, view_b, pairs}");
    }
    MatchSet set;
    set.view_a = m["view_a"].get<ViewId>();
    set.view_b = m["view_b"].get<ViewId>();
    for (const ViewId id : {set.view_a, set.view_b}) {
      if (!graph.HasView(id)) {
        throw ParseError(context + ": unknown view " + std::to_string(id));
      }
    }
    const ViewInfo& va = graph.View(set.view_a);
    const ViewInfo& vb = graph.View(set.view_b);
    size_t pair_index = 0;
    for (const json& p : m["pairs"]) {
      if (!p.is_array() || p.size() != 4) {
        throw ParseError(context + ", pair " + std::to_string(pair_index) +
                         ": expected [xa, ya, xb, yb]");
      }
      const Eigen::Vector2d pa(CoordinateAt(p, 0, record, pair_index),
                               CoordinateAt(p, 1, record, pair_index));
      const Eigen::Vector2d pb(CoordinateAt(p, 2, record, pair_index),
                               CoordinateAt(p, 3, record, pair_index));
      const auto inside = [](const Eigen::Vector2d& x, const ViewInfo& v) {
        return x.x() >= 0.0 && x.y() >= 0.0 && x.x() < v.width &&
               x.y() < v.height;
      };
      if (!inside(pa, va) || !inside(pb, vb)) {
        throw ParseError(context + ", pair " + std::to_string(pair_index) +
                         ": keypoint outside the image");
      }
      set.pairs.emplace_back(graph.AddKeypoint(set.view_a, pa),
                             graph.AddKeypoint(set.view_b, pb));
      ++pair_index;
    }
    try {
      graph.AddMatchSet(std::move(set));
    } catch (const std::invalid_argument& e) {
      throw ParseError(context + ": " + e.what());
    }
    ++record;
  }
  return graph;
}

MatchGraph LoadMatches(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError("cannot open match file " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseMatches(buffer.str());
}

std::string SerializeMatches(const MatchGraph& graph) {
  json doc;
  doc["views"] = json::array();
  for (const auto& [id, v] : graph.Views()) {
    doc["views"].push_back({{"id", id}, {"width", v.width}, {"height", v.height}});
  }
  doc["matches"] = json::array();
  for (const MatchSet& m : graph.MatchSets()) {
    json pairs = json::array();
    const auto& ka = graph.Keypoints(m.view_a);
    const auto& kb = graph.Keypoints(m.view_b);
    for (const auto& [ia, ib] : m.pairs) {
      pairs.push_back({ka[ia].x(), ka[ia].y(), kb[ib].x(), kb[ib].y()});
    }
    doc["matches"].push_back(
        {{"view_a", m.view_a}, {"view_b", m.view_b}, {"pairs", std::move(pairs)}});
  }
  return doc.dump(1) + "\n";
}

void SaveMatches(const MatchGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << SerializeMatches(graph);
}

}  // namespace ptzcalib
