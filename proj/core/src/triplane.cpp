#include "tg3d/triplane.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace tg3d {

using detail::input_grad;
using detail::input_value;
using detail::make_result;
using detail::wants_grad;

namespace {

struct Tap {
  int i0;
  double f;
  bool clamped;
};

// Continuous grid index for a coordinate in [-1, 1] with nodes at the ends.
Tap grid_tap(double u, int res) {
  bool clamped = false;
  if (u < -1.0) {
    u = -1.0;
    clamped = true;
  } else if (u > 1.0) {
    u = 1.0;
    clamped = true;
  }
  const double fi = (u + 1.0) * 0.5 * (res - 1);
  int i0 = static_cast<int>(std::floor(fi));
  i0 = std::clamp(i0, 0, res - 2);
  return {i0, fi - i0, clamped};
}

// Plane k uses coordinates (col, row): XY -> (x, y), XZ -> (x, z), YZ -> (y, z).
constexpr int kPlaneAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};

}  // namespace

TriPlane TriPlane::from_tensor(Tensor planes) {
  if (planes.rank() != 4 || planes.dim(0) != 3 || planes.dim(2) != planes.dim(3)) {
    throw std::invalid_argument(fmt::format("TriPlane expects [3, C, R, R], got {}", shape_str(planes.shape())));
  }
  if (planes.dim(2) < 2) throw std::invalid_argument("TriPlane resolution must be at least 2");
  for (double v : planes.data())
    if (!std::isfinite(v)) throw std::invalid_argument("TriPlane holds non-finite values");
  return TriPlane{std::move(planes)};
}

std::vector<double> sample_triplane(const TriPlane& tp, const Vec3& xyz) {
  for (double v : xyz)
    if (!std::isfinite(v)) throw std::invalid_argument("sample_triplane: non-finite query point");
  NoGradGuard no_grad;
  Tensor planes = reshape(tp.planes, {1, 3, tp.channels(), tp.resolution(), tp.resolution()});
  Tensor pts = Tensor::from({1, 1, 3}, {xyz[0], xyz[1], xyz[2]});
  Tensor out = sample_triplanes(planes, pts);
  return {out.data().begin(), out.data().end()};
}

Tensor sample_triplanes(const Tensor& planes, const Tensor& points) {
  if (planes.rank() != 5 || planes.dim(1) != 3 || planes.dim(3) != planes.dim(4)) {
    throw std::invalid_argument(
        fmt::format("sample_triplanes: planes must be [B, 3, C, R, R], got {}", shape_str(planes.shape())));
  }
  if (points.rank() != 3 || points.dim(2) != 3 || points.dim(0) != planes.dim(0)) {
    throw std::invalid_argument(
        fmt::format("sample_triplanes: points must be [B, P, 3], got {}", shape_str(points.shape())));
  }
  const int batch = planes.dim(0), c = planes.dim(2), r = planes.dim(3), p = points.dim(1);
  if (r < 2) throw std::invalid_argument("sample_triplanes: resolution must be at least 2");
  const int64_t plane_stride = static_cast<int64_t>(r) * r;
  const int64_t batch_stride = 3 * c * plane_stride;

  const auto& pv = points.data();
  for (double v : pv)
    if (!std::isfinite(v)) throw std::invalid_argument("sample_triplanes: non-finite query point");
  const auto& gv = planes.data();
  std::vector<double> out(static_cast<size_t>(batch) * p * c, 0.0);
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < p; ++i) {
      const double* xyz = pv.data() + (static_cast<int64_t>(b) * p + i) * 3;
      double* o = out.data() + (static_cast<int64_t>(b) * p + i) * c;
      for (int k = 0; k < 3; ++k) {
        const Tap tc = grid_tap(xyz[kPlaneAxes[k][0]], r);
        const Tap tr = grid_tap(xyz[kPlaneAxes[k][1]], r);
        const double w00 = (1 - tr.f) * (1 - tc.f), w01 = (1 - tr.f) * tc.f;
        const double w10 = tr.f * (1 - tc.f), w11 = tr.f * tc.f;
        const double* base = gv.data() + b * batch_stride + k * c * plane_stride + tr.i0 * r + tc.i0;
        for (int ch = 0; ch < c; ++ch) {
          const double* q = base + ch * plane_stride;
          o[ch] += w00 * q[0] + w01 * q[1] + w10 * q[r] + w11 * q[r + 1];
        }
      }
    }

  return make_result({batch * p, c}, std::move(out), {planes, points}, [=](Node& self) {
    const auto& pts = input_value(self, 1);
    const auto& vals = input_value(self, 0);
    const bool gp = wants_grad(self, 0), gx = wants_grad(self, 1);
    double* dplanes = gp ? input_grad(self, 0).data() : nullptr;
    double* dpts = gx ? input_grad(self, 1).data() : nullptr;
    const double scale = 0.5 * (r - 1);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < p; ++i) {
        const int64_t pi = static_cast<int64_t>(b) * p + i;
        const double* xyz = pts.data() + pi * 3;
        const double* g = self.grad.data() + pi * c;
        for (int k = 0; k < 3; ++k) {
          const Tap tc = grid_tap(xyz[kPlaneAxes[k][0]], r);
          const Tap tr = grid_tap(xyz[kPlaneAxes[k][1]], r);
          const int64_t off = b * batch_stride + k * c * plane_stride + tr.i0 * r + tc.i0;
          if (gp) {
            const double w00 = (1 - tr.f) * (1 - tc.f), w01 = (1 - tr.f) * tc.f;
            const double w10 = tr.f * (1 - tc.f), w11 = tr.f * tc.f;
            for (int ch = 0; ch < c; ++ch) {
              double* q = dplanes + off + ch * plane_stride;
              q[0] += g[ch] * w00;
              q[1] += g[ch] * w01;
              q[r] += g[ch] * w10;
              q[r + 1] += g[ch] * w11;
            }
          }
          if (gx) {
            double dcol = 0.0, drow = 0.0;
            for (int ch = 0; ch < c; ++ch) {
              const double* q = vals.data() + off + ch * plane_stride;
              dcol += g[ch] * ((1 - tr.f) * (q[1] - q[0]) + tr.f * (q[r + 1] - q[r]));
              drow += g[ch] * ((1 - tc.f) * (q[r] - q[0]) + tc.f * (q[r + 1] - q[1]));
            }
            if (!tc.clamped) dpts[pi * 3 + kPlaneAxes[k][0]] += dcol * scale;
            if (!tr.clamped) dpts[pi * 3 + kPlaneAxes[k][1]] += drow * scale;
          }
        }
      }
  });
}

// ---------------------------------------------------------------- decoder

TriPlaneDecoder::TriPlaneDecoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  w0_ = params_.add_normal("fc0.weight", {cfg.in_channels, cfg.hidden}, rng, 1.0 / std::sqrt(cfg.in_channels));
  b0_ = params_.add_constant("fc0.bias", {cfg.hidden}, 0.0);
  w1_ = params_.add_normal("fc1.weight", {cfg.hidden, 1 + cfg.feature_channels}, rng, 1.0 / std::sqrt(cfg.hidden));
  b1_ = params_.add_constant("fc1.bias", {1 + cfg.feature_channels}, 0.0);
}

DecodedPoints TriPlaneDecoder::decode(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != cfg_.in_channels) {
    throw std::invalid_argument(fmt::format("decoder expects [P, {}], got {}", cfg_.in_channels,
                                            shape_str(features.shape())));
  }
  Tensor h = softplus(add_bias(matmul(features, params_[w0_]), params_[b0_]));
  Tensor out = add_bias(matmul(h, params_[w1_]), params_[b1_]);
  const int p = features.dim(0);
  Tensor density = reshape(softplus(slice(out, 1, 0, 1)), {p});
  Tensor feats = slice(out, 1, 1, cfg_.feature_channels);
  return {density, feats};
}

PointSample TriPlaneDecoder::decode_point(std::span<const double> feature) const {
  for (double v : feature)
    if (!std::isfinite(v)) throw std::invalid_argument("decode_point: non-finite feature");
  NoGradGuard no_grad;
  auto out = decode(Tensor::from({1, static_cast<int>(feature.size())}, {feature.begin(), feature.end()}));
  return {out.density.item(), {out.features.data().begin(), out.features.data().end()}};
}

// ---------------------------------------------------------------- meshing

TriangleMesh extract_mesh(const DensityField& field, int grid_res, double iso) {
  if (grid_res < 2) throw std::invalid_argument("extract_mesh: grid_res must be >= 2");
  const int g = grid_res;
  auto coord = [g](int i) { return -1.0 + 2.0 * i / (g - 1); };
  auto node_id = [g](int x, int y, int z) { return (static_cast<int64_t>(z) * g + y) * g + x; };

  std::vector<Vec3> nodes(static_cast<size_t>(g) * g * g);
  for (int z = 0; z < g; ++z)
    for (int y = 0; y < g; ++y)
      for (int x = 0; x < g; ++x) nodes[static_cast<size_t>(node_id(x, y, z))] = {coord(x), coord(y), coord(z)};
  std::vector<double> density(nodes.size());
  field(nodes, density);

  static constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                        {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  static constexpr int kTets[6][4] = {{0, 5, 1, 6}, {0, 1, 2, 6}, {0, 2, 3, 6},
                                      {0, 3, 7, 6}, {0, 7, 4, 6}, {0, 4, 5, 6}};

  TriangleMesh mesh;
  std::map<std::pair<int64_t, int64_t>, int> edge_vertex;
  auto vertex_on_edge = [&](int64_t a, int64_t b) {
    const auto key = std::minmax(a, b);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double va = density[static_cast<size_t>(a)], vb = density[static_cast<size_t>(b)];
    const double t = std::clamp((iso - va) / (vb - va), 0.0, 1.0);
    const Vec3& pa = nodes[static_cast<size_t>(a)];
    const Vec3& pb = nodes[static_cast<size_t>(b)];
    mesh.vertices.push_back({pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]), pa[2] + t * (pb[2] - pa[2])});
    const int id = static_cast<int>(mesh.vertices.size() - 1);
    edge_vertex.emplace(key, id);
    return id;
  };
  auto emit = [&](std::array<int, 3> tri, const Vec3& inside, const Vec3& outside) {
    const Vec3& a = mesh.vertices[static_cast<size_t>(tri[0])];
    const Vec3& b = mesh.vertices[static_cast<size_t>(tri[1])];
    const Vec3& c = mesh.vertices[static_cast<size_t>(tri[2])];
    const Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]}, v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    const Vec3 n{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    const double d = n[0] * (outside[0] - inside[0]) + n[1] * (outside[1] - inside[1]) + n[2] * (outside[2] - inside[2]);
    if (d < 0) std::swap(tri[1], tri[2]);
    if (tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2]) mesh.faces.push_back(tri);
  };
  auto centroid = [&](const std::vector<int64_t>& ids) {
    Vec3 s{0, 0, 0};
    for (auto id : ids)
      for (int k = 0; k < 3; ++k) s[k] += nodes[static_cast<size_t>(id)][k];
    for (auto& v : s) v /= static_cast<double>(ids.size());
    return s;
  };

  for (int z = 0; z + 1 < g; ++z)
    for (int y = 0; y + 1 < g; ++y)
      for (int x = 0; x + 1 < g; ++x) {
        int64_t corner[8];
        for (int k = 0; k < 8; ++k) corner[k] = node_id(x + kCorner[k][0], y + kCorner[k][1], z + kCorner[k][2]);
        for (const auto& tet : kTets) {
          std::vector<int64_t> in, out;
          for (int k : tet) (density[static_cast<size_t>(corner[k])] > iso ? in : out).push_back(corner[k]);
          if (in.empty() || out.empty()) continue;
          const Vec3 ci = centroid(in), co = centroid(out);
          if (in.size() == 1 || out.size() == 1) {
            const auto& lone = in.size() == 1 ? in : out;
            const auto& rest = in.size() == 1 ? out : in;
            emit({vertex_on_edge(lone[0], rest[0]), vertex_on_edge(lone[0], rest[1]), vertex_on_edge(lone[0], rest[2])},
                 ci, co);
          } else {
            const int a = vertex_on_edge(in[0], out[0]);
            const int b = vertex_on_edge(in[0], out[1]);
            const int c = vertex_on_edge(in[1], out[1]);
            const int d = vertex_on_edge(in[1], out[0]);
            emit({a, b, c}, ci, co);
            emit({a, c, d}, ci, co);
          }
        }
      }
  return mesh;
}

TriangleMesh extract_mesh(const TriPlane& tp, const TriPlaneDecoder& decoder, int grid_res, double iso) {
  DensityField field = [&](std::span<const Vec3> pts, std::span<double> out) {
    NoGradGuard no_grad;
    const int n = static_cast<int>(pts.size());
    constexpr int kChunk = 8192;
    Tensor planes = reshape(tp.planes, {1, 3, tp.channels(), tp.resolution(), tp.resolution()});
    for (int start = 0; start < n; start += kChunk) {
      const int len = std::min(kChunk, n - start);
      std::vector<double> flat(static_cast<size_t>(len) * 3);
      for (int i = 0; i < len; ++i)
        for (int k = 0; k < 3; ++k) flat[static_cast<size_t>(i) * 3 + k] = pts[static_cast<size_t>(start + i)][k];
      auto dec = decoder.decode(sample_triplanes(planes, Tensor::from({1, len, 3}, std::move(flat))));
      std::copy(dec.density.data().begin(), dec.density.data().end(), out.begin() + start);
    }
  };
  return extract_mesh(field, grid_res, iso);
}

int euler_characteristic(const TriangleMesh& mesh) {
  std::set<std::pair<int, int>> edges;
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) edges.insert(std::minmax(f[k], f[(k + 1) % 3]));
  return static_cast<int>(mesh.vertices.size()) - static_cast<int>(edges.size()) + static_cast<int>(mesh.faces.size());
}

void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  out << "# triangle mesh: " << mesh.vertices.size() << " vertices, " << mesh.faces.size() << " faces\n";
  for (const auto& v : mesh.vertices) out << fmt::format("v {:.6f} {:.6f} {:.6f}\n", v[0], v[1], v[2]);
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

}  // namespace tg3d
