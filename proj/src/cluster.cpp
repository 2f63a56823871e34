#include "sq/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sq/errors.hpp"

namespace sq {
namespace {

// Lambda = 1/distance, capped so coincident points stay finite.
constexpr double kLambdaCap = 1e12;

double to_lambda(double d) { return d > 1.0 / kLambdaCap ? 1.0 / d : kLambdaCap; }

struct UnionFind {
  std::vector<int32_t> parent;
  explicit UnionFind(int32_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int32_t find(int32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  bool unite(int32_t a, int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
};

struct MstEdge {
  int32_t a, b;
  double w;
};

// Prim over the implicit complete mutual-reachability graph, O(n^2).
std::vector<MstEdge> mst_edges(const std::vector<Eigen::Vector3d>& pts,
                               const std::vector<double>& core) {
  const int32_t n = static_cast<int32_t>(pts.size());
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<int32_t> from(n, -1);
  std::vector<uint8_t> used(n, 0);
  std::vector<MstEdge> edges;
  edges.reserve(n - 1);

  int32_t cur = 0;
  used[0] = 1;
  for (int32_t step = 1; step < n; ++step) {
    for (int32_t j = 0; j < n; ++j) {
      if (used[j]) continue;
      double d = (pts[cur] - pts[j]).norm();
      double mr = std::max({core[cur], core[j], d});
      if (mr < best[j]) {
        best[j] = mr;
        from[j] = cur;
      }
    }
    int32_t nxt = -1;
    for (int32_t j = 0; j < n; ++j) {
      if (used[j]) continue;
      if (nxt < 0 || best[j] < best[nxt]) nxt = j;  // lowest index wins ties
    }
    edges.push_back({from[nxt], nxt, best[nxt]});
    used[nxt] = 1;
    cur = nxt;
  }
  return edges;
}

struct Linkage {
  // Nodes 0..n-1 are points; n..2n-2 are merges.
  std::vector<int32_t> left, right;
  std::vector<double> dist;
  std::vector<int32_t> size;
};

Linkage single_linkage(std::vector<MstEdge> edges, int32_t n) {
  std::sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) {
    if (x.w != y.w) return x.w < y.w;
    auto kx = std::minmax(x.a, x.b), ky = std::minmax(y.a, y.b);
    return kx < ky;
  });

  Linkage lk;
  int32_t total = 2 * n - 1;
  lk.left.assign(total, -1);
  lk.right.assign(total, -1);
  lk.dist.assign(total, 0.0);
  lk.size.assign(total, 1);

  UnionFind uf(total);
  std::vector<int32_t> root_node(total);
  std::iota(root_node.begin(), root_node.end(), 0);

  int32_t next = n;
  for (const MstEdge& e : edges) {
    int32_t ra = root_node[uf.find(e.a)];
    int32_t rb = root_node[uf.find(e.b)];
    lk.left[next] = ra;
    lk.right[next] = rb;
    lk.dist[next] = e.w;
    lk.size[next] = lk.size[ra] + lk.size[rb];
    uf.unite(e.a, e.b);
    root_node[uf.find(e.a)] = next;
    ++next;
  }
  return lk;
}

void collect_points(const Linkage& lk, int32_t node, std::vector<int32_t>& out) {
  std::vector<int32_t> stack = {node};
  while (!stack.empty()) {
    int32_t x = stack.back();
    stack.pop_back();
    if (lk.left[x] < 0) {
      out.push_back(x);
    } else {
      stack.push_back(lk.left[x]);
      stack.push_back(lk.right[x]);
    }
  }
}

struct Condensed {
  // Cluster 0 is the root. Point rows carry (cluster, point, lambda);
  // cluster rows are implied by parent/birth.
  std::vector<int32_t> parent;       // per cluster
  std::vector<double> birth;         // per cluster
  std::vector<int32_t> csize;        // per cluster, points under it at birth
  std::vector<int32_t> point_owner;  // per point: cluster it leaves
  std::vector<double> point_lambda;  // per point: lambda at which it leaves
};

Condensed condense(const Linkage& lk, int32_t n, int min_cluster_size) {
  Condensed ct;
  ct.parent = {-1};
  ct.birth = {0.0};
  ct.csize = {n};
  ct.point_owner.assign(n, 0);
  ct.point_lambda.assign(n, 0.0);

  struct Item {
    int32_t node;
    int32_t cid;
  };
  std::vector<Item> stack = {{2 * n - 2, 0}};
  if (n == 1) {
    ct.point_lambda[0] = kLambdaCap;
    return ct;
  }

  auto shed = [&](int32_t node, int32_t cid, double lam) {
    std::vector<int32_t> pts;
    collect_points(lk, node, pts);
    for (int32_t p : pts) {
      ct.point_owner[p] = cid;
      ct.point_lambda[p] = lam;
    }
  };

  while (!stack.empty()) {
    auto [node, cid] = stack.back();
    stack.pop_back();
    int32_t l = lk.left[node], r = lk.right[node];
    double lam = to_lambda(lk.dist[node]);
    bool big_l = lk.size[l] >= min_cluster_size;
    bool big_r = lk.size[r] >= min_cluster_size;

    if (big_l && big_r) {
      for (int32_t child : {l, r}) {
        int32_t ncid = static_cast<int32_t>(ct.parent.size());
        ct.parent.push_back(cid);
        ct.birth.push_back(lam);
        ct.csize.push_back(lk.size[child]);
        stack.push_back({child, ncid});
      }
    } else if (big_l) {
      shed(r, cid, lam);
      stack.push_back({l, cid});
    } else if (big_r) {
      shed(l, cid, lam);
      stack.push_back({r, cid});
    } else {
      shed(l, cid, lam);
      shed(r, cid, lam);
    }
  }
  return ct;
}

// Excess-of-mass selection; the root is never selectable.
std::vector<uint8_t> select_clusters(const Condensed& ct) {
  const size_t m = ct.parent.size();
  std::vector<double> stability(m, 0.0);
  for (size_t p = 0; p < ct.point_owner.size(); ++p) {
    int32_t c = ct.point_owner[p];
    if (ct.point_lambda[p] > ct.birth[c])
      stability[c] += ct.point_lambda[p] - ct.birth[c];
  }
  for (size_t c = 1; c < m; ++c) {
    int32_t par = ct.parent[c];
    if (ct.birth[c] > ct.birth[par])
      stability[par] += (ct.birth[c] - ct.birth[par]) * ct.csize[c];
  }

  // Clusters are created parents-first, so a reverse pass sees children first.
  std::vector<double> subtree(m, 0.0);
  std::vector<uint8_t> selected(m, 0);
  std::vector<uint8_t> has_child(m, 0);
  for (size_t c = m; c-- > 1;) {
    double sub = subtree[c];
    if (!has_child[c] || stability[c] >= sub) {
      selected[c] = 1;
      subtree[c] = stability[c];
    }
    subtree[ct.parent[c]] += subtree[c];
    has_child[ct.parent[c]] = 1;
  }

  // Drop anything under an already selected ancestor.
  for (size_t c = 1; c < m; ++c) {
    int32_t a = ct.parent[c];
    while (a > 0) {
      if (selected[a]) {
        selected[c] = 0;
        break;
      }
      a = ct.parent[a];
    }
  }
  return selected;
}

}  // namespace

ClusterSet cluster_gaussians(const Scene& scene, std::span<const int32_t> active,
                             const ClusterParams& params) {
  if (params.min_cluster_size < 2)
    throw ValidationError("cluster: min_cluster_size must be at least 2");
  if (params.min_samples < 1)
    throw ValidationError("cluster: min_samples must be at least 1");

  // Canonicalize input so the result is order-invariant.
  std::vector<int32_t> ids(active.begin(), active.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  for (int32_t id : ids)
    if (id < 0 || static_cast<size_t>(id) >= scene.size())
      throw ValidationError("cluster: gaussian id " + std::to_string(id) +
                            " out of range");

  ClusterSet out;
  const int32_t n = static_cast<int32_t>(ids.size());
  if (n < params.min_cluster_size) return out;

  std::vector<Eigen::Vector3d> pts(n);
  for (int32_t i = 0; i < n; ++i) pts[i] = scene.gaussians[ids[i]].mu;

  // Core distance: distance to the min_samples-th neighbor, self included.
  std::vector<double> core(n, 0.0);
  int k_other = std::min(params.min_samples - 1, n - 1);
  if (k_other > 0) {
    std::vector<double> row(n - 1);
    for (int32_t i = 0; i < n; ++i) {
      int32_t m = 0;
      for (int32_t j = 0; j < n; ++j)
        if (j != i) row[m++] = (pts[i] - pts[j]).norm();
      std::nth_element(row.begin(), row.begin() + (k_other - 1), row.end());
      core[i] = row[k_other - 1];
    }
  }

  Linkage lk = single_linkage(mst_edges(pts, core), n);
  Condensed ct = condense(lk, n, params.min_cluster_size);
  std::vector<uint8_t> selected = select_clusters(ct);

  // Label points by the nearest selected ancestor of their leave cluster.
  std::vector<int32_t> label(n, -1);
  for (int32_t p = 0; p < n; ++p) {
    int32_t c = ct.point_owner[p];
    while (c > 0 && !selected[c]) c = ct.parent[c];
    if (c > 0) label[p] = c;
  }

  // Compact labels into member lists.
  std::vector<std::vector<int32_t>> groups;
  {
    std::vector<int32_t> remap(ct.parent.size(), -1);
    for (int32_t p = 0; p < n; ++p) {
      if (label[p] < 0) continue;
      if (remap[label[p]] < 0) {
        remap[label[p]] = static_cast<int32_t>(groups.size());
        groups.emplace_back();
      }
      groups[remap[label[p]]].push_back(p);
    }
  }
  if (groups.empty()) return out;

  // Transitive centroid merge at the pre-merge centroids.
  double eps = params.merge_eps >= 0 ? params.merge_eps
                                     : 0.05 * scene.bounds.diagonal();
  std::vector<Eigen::Vector3d> cent(groups.size(), Eigen::Vector3d::Zero());
  for (size_t g = 0; g < groups.size(); ++g) {
    for (int32_t p : groups[g]) cent[g] += pts[p];
    cent[g] /= static_cast<double>(groups[g].size());
  }
  UnionFind uf(static_cast<int32_t>(groups.size()));
  for (size_t a = 0; a < groups.size(); ++a)
    for (size_t b = a + 1; b < groups.size(); ++b)
      if ((cent[a] - cent[b]).norm() <= eps)
        uf.unite(static_cast<int32_t>(a), static_cast<int32_t>(b));

  std::vector<std::vector<int32_t>> merged(groups.size());
  for (size_t g = 0; g < groups.size(); ++g) {
    auto& dst = merged[uf.find(static_cast<int32_t>(g))];
    for (int32_t p : groups[g]) dst.push_back(ids[p]);
  }

  for (auto& m : merged) {
    if (m.empty()) continue;
    std::sort(m.begin(), m.end());
    out.clusters.push_back(std::move(m));
  }
  std::sort(out.clusters.begin(), out.clusters.end(),
            [](const std::vector<int32_t>& a, const std::vector<int32_t>& b) {
              if (a.size() != b.size()) return a.size() > b.size();
              return a.front() < b.front();
            });

  for (const auto& m : out.clusters) {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (int32_t id : m) c += scene.gaussians[id].mu;
    out.centroids.push_back(c / static_cast<double>(m.size()));
  }
  return out;
}

}  // namespace sq
