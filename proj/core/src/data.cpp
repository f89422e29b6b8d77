#include "tg3d/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace tg3d {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& attribute_names() {
  static const std::vector<std::string> names{"black hair", "blond hair",  "red hair",  "blue eyes",
                                              "brown eyes", "eyeglasses", "pale skin", "dark skin"};
  return names;
}

int attribute_count() { return static_cast<int>(attribute_names().size()); }

namespace {

constexpr const char* kHairWords[] = {"black", "blond", "red"};
constexpr const char* kEyeWords[] = {"blue", "brown"};
constexpr const char* kSkinWords[] = {"pale", "medium", "dark"};

constexpr Vec3 kHairColors[] = {{0.08, 0.07, 0.07}, {0.93, 0.80, 0.45}, {0.75, 0.25, 0.10}};
constexpr Vec3 kEyeColors[] = {{0.20, 0.40, 0.90}, {0.40, 0.22, 0.08}};
constexpr Vec3 kSkinColors[] = {{0.95, 0.82, 0.74}, {0.82, 0.62, 0.48}, {0.45, 0.30, 0.20}};
constexpr Vec3 kMouthColor{0.60, 0.15, 0.15};
constexpr Vec3 kGlassesColor{0.12, 0.12, 0.14};

enum Label : uint8_t { kBackground = 0, kSkin = 1, kHair = 2, kEyes = 3, kMouth = 4, kAccessory = 5 };

double length(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// Approximate signed distance to an axis-aligned ellipsoid centred at c.
double sd_ellipsoid(const Vec3& p, const Vec3& c, const Vec3& r) {
  const Vec3 q = sub(p, c);
  const double k0 = length({q[0] / r[0], q[1] / r[1], q[2] / r[2]});
  const double k1 = length({q[0] / (r[0] * r[0]), q[1] / (r[1] * r[1]), q[2] / (r[2] * r[2])});
  if (k1 == 0.0) return -std::min({r[0], r[1], r[2]});
  return k0 * (k0 - 1.0) / k1;
}

double sd_sphere(const Vec3& p, const Vec3& c, double r) { return length(sub(p, c)) - r; }

// Torus around an axis parallel to z through c.
double sd_torus_z(const Vec3& p, const Vec3& c, double major, double minor) {
  const Vec3 q = sub(p, c);
  const double ring = std::hypot(q[0], q[1]) - major;
  return std::hypot(ring, q[2]) - minor;
}

double sd_capsule(const Vec3& p, const Vec3& a, const Vec3& b, double r) {
  const Vec3 pa = sub(p, a), ba = sub(b, a);
  const double h = std::clamp(dot(pa, ba) / dot(ba, ba), 0.0, 1.0);
  return length({pa[0] - h * ba[0], pa[1] - h * ba[1], pa[2] - h * ba[2]}) - r;
}

struct Scene {
  const FaceParams& face;
  Vec3 eye_l, eye_r, mouth;
  double glasses_z = 0.0;

  explicit Scene(const FaceParams& f) : face(f) {
    const auto& r = f.head_radii;
    auto surface_z = [&](double x, double y) {
      return r[2] * std::sqrt(std::max(0.0, 1.0 - (x / r[0]) * (x / r[0]) - (y / r[1]) * (y / r[1])));
    };
    const double ez = surface_z(f.eye_spacing, 0.1) - 0.04;
    eye_l = {-f.eye_spacing, 0.1, ez};
    eye_r = {f.eye_spacing, 0.1, ez};
    mouth = {0.0, -0.3, surface_z(0.0, -0.3) - 0.02};
    glasses_z = ez + 0.09;
  }

  // Distance and label of the nearest surface.
  std::pair<double, Label> eval(const Vec3& p) const {
    const auto& r = face.head_radii;
    double best = sd_ellipsoid(p, {0, 0, 0}, r);
    Label label = kSkin;
    auto consider = [&](double d, Label l) {
      if (d < best) {
        best = d;
        label = l;
      }
    };
    const Vec3 big{r[0] + face.hair_thickness, r[1] + face.hair_thickness, r[2] + face.hair_thickness};
    const Vec3 n{0.0, 0.819, -0.573};
    consider(std::max(sd_ellipsoid(p, {0, 0, 0}, big), face.hair_line - dot(n, p)), kHair);
    consider(std::min(sd_sphere(p, eye_l, 0.085), sd_sphere(p, eye_r, 0.085)), kEyes);
    consider(sd_ellipsoid(p, mouth, {face.mouth_width, 0.035, 0.05}), kMouth);
    if (face.glasses) {
      const double s = face.eye_spacing;
      double g = std::min(sd_torus_z(p, {-s, 0.1, glasses_z}, 0.12, 0.022), sd_torus_z(p, {s, 0.1, glasses_z}, 0.12, 0.022));
      g = std::min(g, sd_capsule(p, {-s + 0.12, 0.1, glasses_z}, {s - 0.12, 0.1, glasses_z}, 0.02));
      consider(g, kAccessory);
    }
    return {best, label};
  }

  Vec3 color(Label l) const {
    auto jitter = [](const Vec3& c, const Vec3& j) {
      return Vec3{std::clamp(c[0] + j[0], 0.0, 1.0), std::clamp(c[1] + j[1], 0.0, 1.0), std::clamp(c[2] + j[2], 0.0, 1.0)};
    };
    switch (l) {
      case kSkin: return jitter(kSkinColors[static_cast<int>(face.skin)], face.skin_jitter);
      case kHair: return jitter(kHairColors[static_cast<int>(face.hair)], face.hair_jitter);
      case kEyes: return kEyeColors[static_cast<int>(face.eyes)];
      case kMouth: return kMouthColor;
      case kAccessory: return kGlassesColor;
      default: return {1.0, 1.0, 1.0};
    }
  }
};

struct Hit {
  Vec3 color{1.0, 1.0, 1.0};
  Label label = kBackground;
};

Hit trace(const Scene& scene, const Vec3& origin, const Vec3& dir) {
  double t = 0.5;
  for (int step = 0; step < 256 && t < 6.0; ++step) {
    const Vec3 p{origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]};
    const auto [d, label] = scene.eval(p);
    if (d < 1e-4) {
      const double h = 1e-4;
      Vec3 n{};
      for (int k = 0; k < 3; ++k) {
        Vec3 a = p, b = p;
        a[static_cast<size_t>(k)] += h;
        b[static_cast<size_t>(k)] -= h;
        n[static_cast<size_t>(k)] = scene.eval(a).first - scene.eval(b).first;
      }
      const double nl = length(n);
      const Vec3 light{0.327, 0.490, 0.808};
      const double lambert = nl > 0.0 ? std::max(0.0, dot(n, light) / nl) : 0.0;
      const double shade = 0.5 + 0.5 * lambert;
      const Vec3 c = scene.color(label);
      return {{c[0] * shade, c[1] * shade, c[2] * shade}, label};
    }
    t += std::max(0.9 * d, 1e-4);
  }
  return {};
}

CameraParams camera_from_json(const json& j, size_t index) {
  if (!j.is_array()) throw std::runtime_error(fmt::format("record {}: camera must be an array", index));
  const auto v = j.get<std::vector<double>>();
  if (v.size() != CameraParams::kDim) {
    throw std::runtime_error(fmt::format("record {}: camera has {} values, expected {}", index, v.size(), CameraParams::kDim));
  }
  CameraParams cam = CameraParams::from_vector(v);
  try {
    cam.validate();
  } catch (const std::exception& e) {
    throw std::runtime_error(fmt::format("record {}: invalid camera: {}", index, e.what()));
  }
  return cam;
}

json record_to_json(const Record& r) {
  const auto cam = r.camera.to_vector();
  json j{{"id", r.id},
         {"image", r.image},
         {"captions", r.captions},
         {"camera", std::vector<double>(cam.begin(), cam.end())},
         {"attributes", r.attributes}};
  if (!r.mask.empty()) j["mask"] = r.mask;
  if (r.face) j["face"] = r.face->to_json();
  return j;
}

}  // namespace

// ---------------------------------------------------------------- faces

json FaceParams::to_json() const {
  return {{"hair", static_cast<int>(hair)},
          {"eyes", static_cast<int>(eyes)},
          {"skin", static_cast<int>(skin)},
          {"glasses", glasses},
          {"head_radii", head_radii},
          {"hair_thickness", hair_thickness},
          {"hair_line", hair_line},
          {"eye_spacing", eye_spacing},
          {"mouth_width", mouth_width},
          {"skin_jitter", skin_jitter},
          {"hair_jitter", hair_jitter}};
}

FaceParams FaceParams::from_json(const json& j) {
  FaceParams f;
  f.hair = static_cast<HairColor>(j.at("hair").get<int>());
  f.eyes = static_cast<EyeColor>(j.at("eyes").get<int>());
  f.skin = static_cast<SkinTone>(j.at("skin").get<int>());
  f.glasses = j.at("glasses").get<bool>();
  f.head_radii = j.at("head_radii").get<Vec3>();
  f.hair_thickness = j.at("hair_thickness").get<double>();
  f.hair_line = j.at("hair_line").get<double>();
  f.eye_spacing = j.at("eye_spacing").get<double>();
  f.mouth_width = j.at("mouth_width").get<double>();
  f.skin_jitter = j.at("skin_jitter").get<Vec3>();
  f.hair_jitter = j.at("hair_jitter").get<Vec3>();
  return f;
}

std::vector<double> FaceParams::attributes() const {
  std::vector<double> a(attribute_names().size(), 0.0);
  a[static_cast<size_t>(hair)] = 1.0;
  a[3 + static_cast<size_t>(eyes)] = 1.0;
  if (glasses) a[5] = 1.0;
  if (skin == SkinTone::kPale) a[6] = 1.0;
  if (skin == SkinTone::kDark) a[7] = 1.0;
  return a;
}

FaceParams random_face(Rng& rng) {
  FaceParams f;
  f.hair = static_cast<HairColor>(rng.uniform_int(3));
  f.eyes = static_cast<EyeColor>(rng.uniform_int(2));
  f.skin = static_cast<SkinTone>(rng.uniform_int(3));
  f.glasses = rng.uniform() < 0.5;
  f.head_radii = {rng.uniform(0.5, 0.6), rng.uniform(0.64, 0.74), rng.uniform(0.55, 0.63)};
  f.hair_thickness = rng.uniform(0.05, 0.11);
  f.hair_line = rng.uniform(0.02, 0.14);
  f.eye_spacing = rng.uniform(0.17, 0.23);
  f.mouth_width = rng.uniform(0.12, 0.18);
  for (auto& v : f.skin_jitter) v = rng.uniform(-0.04, 0.04);
  for (auto& v : f.hair_jitter) v = rng.uniform(-0.04, 0.04);
  return f;
}

std::vector<std::string> face_captions(const FaceParams& face) {
  const std::string hair = kHairWords[static_cast<int>(face.hair)];
  const std::string eyes = kEyeWords[static_cast<int>(face.eyes)];
  const bool has_skin = face.skin != SkinTone::kMedium;
  const std::string skin = kSkinWords[static_cast<int>(face.skin)];
  std::string hair_cap = hair;
  hair_cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(hair_cap[0])));

  std::string a = fmt::format("A face with {} hair and {} eyes", hair, eyes);
  if (has_skin) a += fmt::format(", with {} skin", skin);
  if (face.glasses) a += ", wearing eyeglasses";
  std::string b = fmt::format("A person with {} eyes and {} hair", eyes, hair);
  if (has_skin) b += fmt::format(" and {} skin", skin);
  if (face.glasses) b += " who wears eyeglasses";
  std::string c = fmt::format("{} hair, {} eyes", hair_cap, eyes);
  if (has_skin) c += fmt::format(", {} skin", skin);
  if (face.glasses) c += ", eyeglasses";
  return {a + ".", b + ".", c + "."};
}

// ---------------------------------------------------------------- poses

CameraParams PoseDistribution::sample(Rng& rng) const {
  const double yaw = rng.uniform(-yaw_range, yaw_range);
  const double pitch = rng.uniform(-pitch_range, pitch_range);
  return orbit_camera(yaw, pitch, radius, focal);
}

std::vector<CameraParams> PoseDistribution::ring(int n) const {
  if (n < 1) throw std::invalid_argument("pose ring needs at least one view");
  std::vector<CameraParams> out;
  for (int i = 0; i < n; ++i) {
    const double yaw = n == 1 ? 0.0 : -yaw_range + 2.0 * yaw_range * i / (n - 1);
    out.push_back(orbit_camera(yaw, 0.0, radius, focal));
  }
  return out;
}

// ---------------------------------------------------------------- rendering

FaceRender render_face(const FaceParams& face, const CameraParams& cam, int res) {
  constexpr int kSuper = 2;
  const Scene scene(face);
  const RayBundle rays = generate_rays(cam, res * kSuper, 0.5, 6.0);
  FaceRender out;
  out.image = Image(res, res);
  out.labels = {res, res, std::vector<uint8_t>(static_cast<size_t>(res) * res, 0)};
  const int sres = res * kSuper;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      Vec3 acc{0, 0, 0};
      int votes[6] = {0, 0, 0, 0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const size_t r = (static_cast<size_t>(y * kSuper + sy) * sres + (x * kSuper + sx)) * 3;
          const Vec3 o{rays.origins[r], rays.origins[r + 1], rays.origins[r + 2]};
          const Vec3 d{rays.directions[r], rays.directions[r + 1], rays.directions[r + 2]};
          const Hit h = trace(scene, o, d);
          for (int k = 0; k < 3; ++k) acc[static_cast<size_t>(k)] += h.color[static_cast<size_t>(k)];
          ++votes[h.label];
        }
      for (int k = 0; k < 3; ++k) out.image.at(y, x, k) = acc[static_cast<size_t>(k)] / (kSuper * kSuper);
      int best = 0;
      for (int l = 1; l < 6; ++l)
        if (votes[l] > votes[best]) best = l;
      out.labels.labels[static_cast<size_t>(y) * res + x] = static_cast<uint8_t>(best);
    }
  out.image = quantize8(out.image);
  return out;
}

// ---------------------------------------------------------------- manifest

DatasetManifest synthesize_toy_dataset(int n, uint64_t seed, const fs::path& out_dir, const SynthOptions& opts) {
  if (n < 1) throw std::invalid_argument("synthesize_toy_dataset: n must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec || !fs::is_directory(out_dir / "images")) {
    throw std::runtime_error(fmt::format("cannot create dataset directory '{}'", out_dir.string()));
  }
  DatasetManifest m;
  m.root = out_dir;
  m.attribute_vocabulary = attribute_names();
  m.image_res = opts.image_res;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    Record r;
    r.id = fmt::format("{:06d}", i);
    r.image = fmt::format("images/{}.png", r.id);
    r.mask = fmt::format("masks/{}.png", r.id);
    const FaceParams face = random_face(rng);
    r.camera = opts.poses.sample(rng);
    const bool unlabeled = rng.uniform() < opts.unlabeled_fraction;
    if (!unlabeled) r.captions = face_captions(face);
    r.attributes = face.attributes();
    r.face = face;
    const FaceRender fr = render_face(face, r.camera, opts.image_res);
    write_png(out_dir / r.image, fr.image);
    write_label_png(out_dir / r.mask, fr.labels);
    m.records.push_back(std::move(r));
  }
  const fs::path tmp = out_dir / "manifest.jsonl.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write manifest in '{}'", out_dir.string()));
    for (const auto& r : m.records) out << record_to_json(r).dump() << '\n';
  }
  fs::rename(tmp, out_dir / "manifest.jsonl");
  std::ofstream meta(out_dir / "dataset.json", std::ios::binary);
  meta << json{{"attributes", m.attribute_vocabulary}, {"image_res", m.image_res}, {"n", n}, {"seed", seed}}.dump(2)
       << '\n';
  return m;
}

DatasetManifest load_dataset(const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  const fs::path manifest = root / "manifest.jsonl";
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error(fmt::format("missing manifest '{}'", manifest.string()));
  m.attribute_vocabulary = attribute_names();
  if (std::ifstream meta(root / "dataset.json"); meta) {
    const json j = json::parse(meta);
    m.attribute_vocabulary = j.at("attributes").get<std::vector<std::string>>();
    m.image_res = j.value("image_res", 32);
  }
  const size_t k = m.attribute_vocabulary.size();
  std::string line;
  size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(fmt::format("record {}: malformed JSON: {}", index, e.what()));
    }
    Record r;
    try {
      r.id = j.value("id", fmt::format("{:06d}", index));
      r.image = j.at("image").get<std::string>();
      r.mask = j.value("mask", std::string());
      r.captions = j.value("captions", std::vector<std::string>{});
      r.attributes = j.at("attributes").get<std::vector<double>>();
      if (j.contains("face")) r.face = FaceParams::from_json(j.at("face"));
    } catch (const json::exception& e) {
      throw std::runtime_error(fmt::format("record {}: {}", index, e.what()));
    }
    r.camera = camera_from_json(j.at("camera"), index);
    if (r.attributes.size() != k) {
      throw std::runtime_error(
          fmt::format("record {}: {} attributes, expected {}", index, r.attributes.size(), k));
    }
    for (double a : r.attributes)
      if (a != 0.0 && a != 1.0) throw std::runtime_error(fmt::format("record {}: attributes must be 0 or 1", index));
    if (!fs::exists(root / r.image)) {
      throw std::runtime_error(fmt::format("record {}: missing image '{}'", index, (root / r.image).string()));
    }
    if (!r.mask.empty() && !fs::exists(root / r.mask)) {
      throw std::runtime_error(fmt::format("record {}: missing mask '{}'", index, (root / r.mask).string()));
    }
    m.records.push_back(std::move(r));
    ++index;
  }
  if (m.records.empty()) throw std::runtime_error(fmt::format("manifest '{}' has no records", manifest.string()));
  return m;
}

Dataset load_images(DatasetManifest manifest) {
  Dataset d;
  d.images.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    d.images.push_back(read_png(manifest.root / r.image));
    d.masks.push_back(r.mask.empty() ? LabelMap{} : read_label_png(manifest.root / r.mask));
  }
  d.manifest = std::move(manifest);
  return d;
}

std::vector<TrainSample> sample_batch(const Dataset& data, int n, int z_dim, Rng& rng,
                                      const std::vector<size_t>& indices) {
  if (n < 1) throw std::invalid_argument("sample_batch: n must be >= 1");
  const size_t pool = indices.empty() ? data.size() : indices.size();
  if (pool == 0) throw std::invalid_argument("sample_batch: empty dataset");
  std::vector<TrainSample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto pick = static_cast<size_t>(rng.uniform_int(static_cast<int>(pool)));
    const size_t idx = indices.empty() ? pick : indices[pick];
    const Record& r = data.manifest.records[idx];
    TrainSample s;
    s.record = idx;
    s.z = rng.normal_vector(static_cast<size_t>(z_dim));
    s.text = r.captions.empty() ? TextInput("") : TextInput(r.captions[static_cast<size_t>(rng.uniform_int(static_cast<int>(r.captions.size())))]);
    s.camera = r.camera;
    s.image = &data.images[idx];
    s.labels = r.attributes;
    s.mask = data.masks[idx].labels.empty() ? nullptr : &data.masks[idx];
    out.push_back(std::move(s));
  }
  return out;
}

Split split_records(size_t n, int period) {
  Split s;
  for (size_t i = 0; i < n; ++i) {
    if (period > 1 && static_cast<int>(i % static_cast<size_t>(period)) == period - 1) {
      s.held_out.push_back(i);
    } else {
      s.train.push_back(i);
    }
  }
  return s;
}

}  // namespace tg3d
