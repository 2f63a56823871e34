#include "sq/scene.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "sq/errors.hpp"
#include "sq/mathutil.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little endian host");

namespace sq {
namespace {

using json = nlohmann::json;

constexpr char kEmbedMagic[8] = {'S', 'Q', 'E', 'M', 'B', 'E', 'D', '1'};

std::string chomp(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n' || s.back() == ' '))
    s.pop_back();
  return s;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open file for writing: " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("short write: " + path);
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("invalid json in " + path + ": " + e.what());
  }
}

double require_number(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || !j[key].is_number())
    throw FormatError(ctx + ": missing numeric field '" + key + "'");
  return j[key].get<double>();
}

}  // namespace

const Camera& Scene::camera_by_id(int32_t id) const {
  for (const Camera& c : cameras)
    if (c.id == id) return c;
  throw ValidationError("camera id " + std::to_string(id) + " not found");
}

void Scene::recompute_bounds() {
  bounds = Aabb{};
  if (gaussians.empty()) return;
  bounds.lo = bounds.hi = gaussians[0].mu;
  for (const Gaussian& g : gaussians) bounds.expand(g.mu);
}

Scene load_gaussian_ply(const std::string& path) {
  std::string blob = read_file(path);
  std::istringstream in(blob);

  std::string line;
  if (!std::getline(in, line) || chomp(line) != "ply")
    throw FormatError(path + ": not a ply file");

  size_t vertex_count = 0;
  bool have_format = false, have_vertex = false, header_done = false;
  std::vector<std::string> props;
  while (std::getline(in, line)) {
    auto tok = split_ws(chomp(line));
    if (tok.empty()) continue;
    if (tok[0] == "comment") continue;
    if (tok[0] == "format") {
      if (tok.size() < 3 || tok[1] != "binary_little_endian" || tok[2] != "1.0")
        throw FormatError(path + ": unsupported ply format, expected binary_little_endian 1.0");
      have_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() < 3 || tok[1] != "vertex")
        throw FormatError(path + ": unsupported ply element '" +
                          (tok.size() > 1 ? tok[1] : "") + "'");
      if (have_vertex) throw FormatError(path + ": duplicate vertex element");
      vertex_count = std::stoull(tok[2]);
      have_vertex = true;
    } else if (tok[0] == "property") {
      if (!have_vertex)
        throw FormatError(path + ": property before vertex element");
      if (tok.size() < 3 || tok[1] != "float")
        throw FormatError(path + ": only float properties are supported, got '" + line + "'");
      props.push_back(tok[2]);
    } else if (tok[0] == "end_header") {
      header_done = true;
      break;
    } else {
      throw FormatError(path + ": unexpected header line '" + tok[0] + "'");
    }
  }
  if (!header_done) throw FormatError(path + ": missing end_header");
  if (!have_format) throw FormatError(path + ": missing format line");
  if (!have_vertex) throw FormatError(path + ": missing vertex element");

  std::unordered_map<std::string, size_t> index;
  for (size_t i = 0; i < props.size(); ++i) {
    if (!index.emplace(props[i], i).second)
      throw FormatError(path + ": duplicate property '" + props[i] + "'");
  }
  auto need = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end())
      throw FormatError(path + ": missing required property '" + name + "'");
    return it->second;
  };

  const size_t px = need("x"), py = need("y"), pz = need("z");
  const size_t pdc[3] = {need("f_dc_0"), need("f_dc_1"), need("f_dc_2")};
  const size_t pop = need("opacity");
  const size_t psc[3] = {need("scale_0"), need("scale_1"), need("scale_2")};
  const size_t prot[4] = {need("rot_0"), need("rot_1"), need("rot_2"), need("rot_3")};

  size_t rest_count = 0;
  for (const auto& p : props)
    if (p.rfind("f_rest_", 0) == 0) ++rest_count;
  std::vector<size_t> prest(rest_count);
  for (size_t k = 0; k < rest_count; ++k)
    prest[k] = need("f_rest_" + std::to_string(k));

  int sh_degree = -1;
  for (int d = 0; d <= 3; ++d) {
    size_t basis = static_cast<size_t>((d + 1) * (d + 1));
    if (rest_count == (basis - 1) * 3) sh_degree = d;
  }
  if (sh_degree < 0)
    throw FormatError(path + ": unsupported f_rest count " + std::to_string(rest_count));

  const size_t stride = props.size() * 4;
  const size_t header_bytes = static_cast<size_t>(in.tellg());
  if (blob.size() < header_bytes + vertex_count * stride)
    throw FormatError(path + ": truncated vertex payload");
  const char* base = blob.data() + header_bytes;

  auto at = [&](size_t row, size_t prop) {
    float v;
    std::memcpy(&v, base + row * stride + prop * 4, 4);
    return v;
  };

  Scene scene;
  scene.sh_degree = sh_degree;
  const size_t basis = static_cast<size_t>(scene.sh_basis());
  const size_t coeffs_per_ch = basis - 1;
  scene.gaussians.resize(vertex_count);
  scene.sh.assign(vertex_count * basis * 3, 0.0);

  for (size_t j = 0; j < vertex_count; ++j) {
    auto finite = [&](size_t prop, const char* what) {
      float v = at(j, prop);
      if (!std::isfinite(v))
        throw ValidationError(path + ": non-finite " + std::string(what) +
                              " in gaussian " + std::to_string(j));
      return static_cast<double>(v);
    };

    Gaussian& g = scene.gaussians[j];
    g.id = static_cast<int32_t>(j);
    g.mu = {finite(px, "x"), finite(py, "y"), finite(pz, "z")};
    g.scale = {std::exp(finite(psc[0], "scale_0")), std::exp(finite(psc[1], "scale_1")),
               std::exp(finite(psc[2], "scale_2"))};
    g.alpha = sigmoid(finite(pop, "opacity"));

    double qw = finite(prot[0], "rot_0"), qx = finite(prot[1], "rot_1");
    double qy = finite(prot[2], "rot_2"), qz = finite(prot[3], "rot_3");
    double qn = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    if (qn < 1e-12)
      throw ValidationError(path + ": zero quaternion in gaussian " + std::to_string(j));
    g.rot = Eigen::Quaterniond(qw / qn, qx / qn, qy / qn, qz / qn);

    double* shj = scene.sh.data() + j * basis * 3;
    for (int c = 0; c < 3; ++c) shj[c] = finite(pdc[c], "f_dc");
    for (int c = 0; c < 3; ++c)
      for (size_t k = 0; k < coeffs_per_ch; ++k)
        shj[(k + 1) * 3 + c] = finite(prest[c * coeffs_per_ch + k], "f_rest");
  }

  scene.recompute_bounds();
  return scene;
}

void save_gaussian_ply(const Scene& scene, const std::string& path) {
  const size_t n = scene.size();
  const size_t basis = static_cast<size_t>(scene.sh_basis());
  const size_t coeffs_per_ch = basis - 1;

  std::ostringstream h;
  h << "ply\nformat binary_little_endian 1.0\nelement vertex " << n << "\n";
  auto prop = [&](const std::string& name) { h << "property float " << name << "\n"; };
  for (const char* p : {"x", "y", "z", "nx", "ny", "nz"}) prop(p);
  for (int c = 0; c < 3; ++c) prop("f_dc_" + std::to_string(c));
  for (size_t k = 0; k < coeffs_per_ch * 3; ++k) prop("f_rest_" + std::to_string(k));
  prop("opacity");
  for (int c = 0; c < 3; ++c) prop("scale_" + std::to_string(c));
  for (int c = 0; c < 4; ++c) prop("rot_" + std::to_string(c));
  h << "end_header\n";

  std::string out = h.str();
  std::vector<float> row(6 + 3 + coeffs_per_ch * 3 + 1 + 3 + 4);
  for (size_t j = 0; j < n; ++j) {
    const Gaussian& g = scene.gaussians[j];
    const double* shj = scene.sh.data() + j * basis * 3;
    size_t i = 0;
    for (int c = 0; c < 3; ++c) row[i++] = static_cast<float>(g.mu[c]);
    for (int c = 0; c < 3; ++c) row[i++] = 0.0f;  // normals, unused
    for (int c = 0; c < 3; ++c) row[i++] = static_cast<float>(shj[c]);
    for (int c = 0; c < 3; ++c)
      for (size_t k = 0; k < coeffs_per_ch; ++k)
        row[i++] = static_cast<float>(shj[(k + 1) * 3 + c]);
    double a = std::clamp(g.alpha, 1e-7, 1.0 - 1e-7);
    row[i++] = static_cast<float>(inv_sigmoid(a));
    for (int c = 0; c < 3; ++c) row[i++] = static_cast<float>(std::log(g.scale[c]));
    row[i++] = static_cast<float>(g.rot.w());
    row[i++] = static_cast<float>(g.rot.x());
    row[i++] = static_cast<float>(g.rot.y());
    row[i++] = static_cast<float>(g.rot.z());
    out.append(reinterpret_cast<const char*>(row.data()), row.size() * 4);
  }
  write_file(path, out);
}

std::vector<Camera> load_cameras_json(const std::string& path) {
  json j = parse_json_file(path);
  const json* arr = nullptr;
  if (j.is_array()) {
    arr = &j;
  } else if (j.is_object() && j.contains("cameras") && j["cameras"].is_array()) {
    arr = &j["cameras"];
  } else {
    throw FormatError(path + ": expected a camera array or {\"cameras\": [...]}");
  }

  std::vector<Camera> cams;
  std::unordered_set<int32_t> seen;
  for (size_t i = 0; i < arr->size(); ++i) {
    const json& cj = (*arr)[i];
    std::string ctx = path + ": camera " + std::to_string(i);
    if (!cj.is_object()) throw FormatError(ctx + ": not an object");

    Camera c;
    c.id = static_cast<int32_t>(require_number(cj, "id", ctx));
    c.fx = require_number(cj, "fx", ctx);
    c.fy = require_number(cj, "fy", ctx);
    c.cx = require_number(cj, "cx", ctx);
    c.cy = require_number(cj, "cy", ctx);
    c.width = static_cast<int>(require_number(cj, "width", ctx));
    c.height = static_cast<int>(require_number(cj, "height", ctx));
    c.znear = require_number(cj, "near", ctx);
    c.zfar = require_number(cj, "far", ctx);

    if (!cj.contains("R") || !cj["R"].is_array() || cj["R"].size() != 9)
      throw FormatError(ctx + ": 'R' must be 9 numbers, row-major");
    if (!cj.contains("t") || !cj["t"].is_array() || cj["t"].size() != 3)
      throw FormatError(ctx + ": 't' must be 3 numbers");
    for (int r = 0; r < 3; ++r)
      for (int q = 0; q < 3; ++q) c.R(r, q) = cj["R"][r * 3 + q].get<double>();
    for (int r = 0; r < 3; ++r) c.t[r] = cj["t"][r].get<double>();

    if (!seen.insert(c.id).second)
      throw ValidationError(ctx + ": duplicate camera id " + std::to_string(c.id));
    if (c.width < 1 || c.height < 1)
      throw ValidationError(ctx + ": image size must be at least 1x1");
    if (c.fx <= 0 || c.fy <= 0) throw ValidationError(ctx + ": focal lengths must be positive");
    if (!(c.znear > 0) || !(c.zfar > c.znear))
      throw ValidationError(ctx + ": requires 0 < near < far");
    double ortho = (c.R.transpose() * c.R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho > 1e-6 || std::abs(c.R.determinant() - 1.0) > 1e-6)
      throw ValidationError(ctx + ": R is not a rotation matrix");
    if (!c.R.allFinite() || !c.t.allFinite())
      throw ValidationError(ctx + ": non-finite extrinsics");

    cams.push_back(c);
  }
  return cams;
}

void save_cameras_json(const std::vector<Camera>& cameras, const std::string& path) {
  json arr = json::array();
  for (const Camera& c : cameras) {
    json cj;
    cj["id"] = c.id;
    cj["fx"] = c.fx;
    cj["fy"] = c.fy;
    cj["cx"] = c.cx;
    cj["cy"] = c.cy;
    cj["width"] = c.width;
    cj["height"] = c.height;
    cj["near"] = c.znear;
    cj["far"] = c.zfar;
    std::vector<double> r(9), t(3);
    for (int i = 0; i < 3; ++i)
      for (int q = 0; q < 3; ++q) r[i * 3 + q] = c.R(i, q);
    for (int i = 0; i < 3; ++i) t[i] = c.t[i];
    cj["R"] = r;
    cj["t"] = t;
    arr.push_back(cj);
  }
  write_file(path, json{{"cameras", arr}}.dump(2) + "\n");
}

Scene load_scene(const std::string& ply_path, const std::string& cameras_path) {
  Scene scene = load_gaussian_ply(ply_path);
  scene.cameras = load_cameras_json(cameras_path);
  return scene;
}

EmbeddingMatrix load_embedding_matrix(const std::string& path) {
  std::string blob = read_file(path);
  if (blob.size() < 16 || std::memcmp(blob.data(), kEmbedMagic, 8) != 0)
    throw FormatError(path + ": missing embedding container magic");
  uint32_t count = 0, dim = 0;
  std::memcpy(&count, blob.data() + 8, 4);
  std::memcpy(&dim, blob.data() + 12, 4);
  if (dim == 0) throw FormatError(path + ": embedding dim is zero");
  size_t need = 16 + static_cast<size_t>(count) * dim * 4;
  if (blob.size() < need) throw FormatError(path + ": truncated embedding payload");

  EmbeddingMatrix m;
  m.dim = static_cast<int>(dim);
  m.data.resize(static_cast<size_t>(count) * dim);
  std::memcpy(m.data.data(), blob.data() + 16, m.data.size() * 4);

  for (size_t i = 0; i < count; ++i) {
    double norm2 = 0;
    for (uint32_t d = 0; d < dim; ++d) {
      float v = m.data[i * dim + d];
      if (!std::isfinite(v))
        throw ValidationError(path + ": non-finite embedding in row " + std::to_string(i));
      norm2 += static_cast<double>(v) * v;
    }
    if (norm2 == 0)
      throw ValidationError(path + ": zero embedding in row " + std::to_string(i));
  }
  return m;
}

void save_embedding_matrix(const EmbeddingMatrix& m, const std::string& path) {
  std::string out(16, '\0');
  std::memcpy(out.data(), kEmbedMagic, 8);
  uint32_t count = static_cast<uint32_t>(m.count()), dim = static_cast<uint32_t>(m.dim);
  std::memcpy(out.data() + 8, &count, 4);
  std::memcpy(out.data() + 12, &dim, 4);
  out.append(reinterpret_cast<const char*>(m.data.data()), m.data.size() * 4);
  write_file(path, out);
}

void save_category_sidecar(const std::vector<std::string>& labels,
                           const std::vector<std::string>& vocab,
                           const std::string& path) {
  if (vocab.empty()) {
    write_file(path, json(labels).dump(2) + "\n");
  } else {
    write_file(path, json{{"vocab", vocab}, {"labels", labels}}.dump(2) + "\n");
  }
}

namespace {

Scene attach_categories(const Scene& scene, const json& j, const std::string& path) {
  const json* labels = nullptr;
  std::vector<std::string> vocab;
  bool pinned_vocab = false;

  if (j.is_array()) {
    labels = &j;
  } else if (j.is_object() && j.contains("labels") && j["labels"].is_array()) {
    labels = &j["labels"];
    if (j.contains("vocab")) {
      if (!j["vocab"].is_array()) throw FormatError(path + ": 'vocab' must be an array");
      for (const auto& v : j["vocab"]) {
        if (!v.is_string() || v.get<std::string>().empty())
          throw FormatError(path + ": vocab entries must be non-empty strings");
        vocab.push_back(v.get<std::string>());
      }
      pinned_vocab = true;
    }
  } else {
    throw FormatError(path + ": expected a label array or {\"vocab\",\"labels\"}");
  }

  if (labels->size() != scene.size())
    throw ValidationError(path + ": " + std::to_string(labels->size()) +
                          " labels for " + std::to_string(scene.size()) + " gaussians");

  std::unordered_map<std::string, int32_t> lut;
  for (size_t i = 0; i < vocab.size(); ++i) {
    if (!lut.emplace(vocab[i], static_cast<int32_t>(i)).second)
      throw ValidationError(path + ": duplicate vocab entry '" + vocab[i] + "'");
  }

  Scene out = scene;
  out.vocab = vocab;
  out.categories.assign(scene.size(), -1);
  for (size_t i = 0; i < labels->size(); ++i) {
    const json& lj = (*labels)[i];
    if (!lj.is_string())
      throw FormatError(path + ": label " + std::to_string(i) + " is not a string");
    std::string label = lj.get<std::string>();
    if (label.empty()) continue;
    auto it = lut.find(label);
    if (it == lut.end()) {
      if (pinned_vocab)
        throw ValidationError(path + ": label '" + label + "' not in declared vocab");
      int32_t idx = static_cast<int32_t>(out.vocab.size());
      out.vocab.push_back(label);
      lut.emplace(label, idx);
      out.categories[i] = idx;
    } else {
      out.categories[i] = it->second;
    }
  }
  return out;
}

Scene attach_embeddings(const Scene& scene, const std::string& path) {
  EmbeddingMatrix m = load_embedding_matrix(path);
  if (m.count() != scene.size())
    throw ValidationError(path + ": " + std::to_string(m.count()) +
                          " embeddings for " + std::to_string(scene.size()) + " gaussians");

  Scene out = scene;
  out.embed_dim = m.dim;
  out.embeddings.resize(m.data.size());
  for (size_t i = 0; i < m.count(); ++i) {
    double norm2 = 0;
    for (int d = 0; d < m.dim; ++d) {
      double v = m.data[i * m.dim + d];
      norm2 += v * v;
    }
    double inv = 1.0 / std::sqrt(norm2);
    for (int d = 0; d < m.dim; ++d)
      out.embeddings[i * m.dim + d] = static_cast<float>(m.data[i * m.dim + d] * inv);
  }
  return out;
}

}  // namespace

Scene attach_semantics(const Scene& scene, const std::string& sidecar_path) {
  std::ifstream in(sidecar_path, std::ios::binary);
  if (!in) throw FormatError("cannot open sidecar: " + sidecar_path);
  char magic[8] = {};
  in.read(magic, 8);
  if (in.gcount() == 8 && std::memcmp(magic, kEmbedMagic, 8) == 0)
    return attach_embeddings(scene, sidecar_path);
  return attach_categories(scene, parse_json_file(sidecar_path), sidecar_path);
}

}  // namespace sq
