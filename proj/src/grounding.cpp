#include "sq/grounding.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "sq/errors.hpp"
#include "sq/log.hpp"
#include "sq/parse.hpp"

namespace sq {
namespace {

std::vector<int32_t> normalize_ids(std::span<const int32_t> ids, size_t count,
                                   const char* what) {
  std::vector<int32_t> v(ids.begin(), ids.end());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  if (!v.empty() && (v.front() < 0 || static_cast<size_t>(v.back()) >= count))
    throw ValidationError(std::string(what) + ": gaussian id out of range");
  return v;
}

double percentile_linear(std::vector<double> sorted, double q) {
  const double r = q * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(r);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = r - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

std::optional<int> parse_grade(const std::string& text) {
  auto v = parse_index(text, 6);
  if (v && *v >= 1) return v;
  return std::nullopt;
}

}  // namespace

std::vector<int32_t> frustum_filter(const Scene& scene,
                                    std::span<const int32_t> activated,
                                    const Camera& pose) {
  if (pose.width <= 0 || pose.height <= 0)
    throw ValidationError("frustum: camera image size must be positive");
  auto ids = normalize_ids(activated, scene.size(), "frustum");
  std::vector<int32_t> out;
  for (int32_t id : ids) {
    Eigen::Vector3d pc = pose.to_camera(scene.gaussians[id].mu);
    const double z = pc.z();
    if (!(z > pose.znear && z < pose.zfar)) continue;
    const double px = pose.fx * pc.x() / z + pose.cx;
    const double py = pose.fy * pc.y() / z + pose.cy;
    if (px < 0 || px > pose.width || py < 0 || py > pose.height) continue;
    out.push_back(id);
  }
  return out;
}

InstanceLabeling distill_gt(std::span<const LabeledPoint> points,
                            const Scene& scene,
                            const kern::KernelTable* kernels) {
  if (points.empty()) throw ValidationError("distill: no points");
  if (scene.size() == 0) throw ValidationError("distill: empty scene");
  const kern::KernelTable& K = kernels ? *kernels : kern::kernels();
  const size_t n = scene.size();

  std::vector<double> mx(n), my(n), mz(n);
  std::vector<double> ixx(n), ixy(n), ixz(n), iyy(n), iyz(n), izz(n);
  for (size_t j = 0; j < n; ++j) {
    const Gaussian& g = scene.gaussians[j];
    mx[j] = g.mu.x();
    my[j] = g.mu.y();
    mz[j] = g.mu.z();
    Eigen::Matrix3d cov =
        g.covariance() + 1e-8 * Eigen::Matrix3d::Identity();
    Eigen::Matrix3d inv = cov.inverse();
    ixx[j] = inv(0, 0);
    ixy[j] = inv(0, 1);
    ixz[j] = inv(0, 2);
    iyy[j] = inv(1, 1);
    iyz[j] = inv(1, 2);
    izz[j] = inv(2, 2);
  }
  kern::MahalSoa soa{mx.data(),  my.data(),  mz.data(),
                     ixx.data(), ixy.data(), ixz.data(),
                     iyy.data(), iyz.data(), izz.data()};

  std::vector<std::map<int32_t, int64_t>> votes(n);
  for (const LabeledPoint& lp : points) {
    int64_t idx = -1;
    double d2 = 0;
    K.nearest_mahal(soa, static_cast<int64_t>(n), lp.p.x(), lp.p.y(),
                    lp.p.z(), &idx, &d2);
    ++votes[static_cast<size_t>(idx)][lp.instance];
  }

  InstanceLabeling out;
  out.source = "distilled";
  out.labels.assign(n, -1);
  for (size_t j = 0; j < n; ++j) {
    int64_t best = 0;
    for (const auto& [instance, count] : votes[j])
      if (count > best) {
        best = count;
        out.labels[j] = instance;
      }
  }
  return out;
}

std::vector<int32_t> ids_with_label(const InstanceLabeling& labeling,
                                    int32_t instance) {
  std::vector<int32_t> out;
  for (size_t j = 0; j < labeling.labels.size(); ++j)
    if (labeling.labels[j] == instance)
      out.push_back(static_cast<int32_t>(j));
  return out;
}

std::vector<double> normalized_volume(const Scene& scene) {
  if (scene.size() == 0)
    throw ValidationError("normalized volume: empty scene");
  std::vector<double> v(scene.size());
  for (size_t j = 0; j < scene.size(); ++j) v[j] = scene.gaussians[j].volume();

  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  const double v90 = percentile_linear(std::move(sorted), 0.9);
  if (v90 <= 0.0) {
    warn("normalized volume: 90th percentile is not positive, all weights 0");
    return std::vector<double>(scene.size(), 0.0);
  }
  for (double& x : v) x = std::clamp(x / v90, 0.0, 1.0);
  return v;
}

double miou_3d(std::span<const int32_t> pred, std::span<const int32_t> gt,
               std::span<const double> weights) {
  auto p = normalize_ids(pred, weights.size(), "miou pred");
  auto g = normalize_ids(gt, weights.size(), "miou gt");
  double num = 0.0, den = 0.0;
  size_t i = 0, k = 0;
  while (i < p.size() || k < g.size()) {
    if (i < p.size() && k < g.size() && p[i] == g[k]) {
      num += weights[p[i]];
      den += weights[p[i]];
      ++i, ++k;
    } else if (k >= g.size() || (i < p.size() && p[i] < g[k])) {
      den += weights[p[i]];
      ++i;
    } else {
      den += weights[g[k]];
      ++k;
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

double acc_at_k(std::span<const double> ious, double k_percent) {
  if (ious.empty()) throw ValidationError("acc@k: empty iou list");
  for (double x : ious)
    if (!(x >= 0.0 && x <= 1.0))
      throw ValidationError("acc@k: iou outside [0, 1]");
  const double threshold = k_percent / 100.0;
  size_t hits = 0;
  for (double x : ious)
    if (x > threshold) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ious.size());
}

LlmMatchResult llm_match(const std::string& question,
                         const std::string& ground_truth,
                         const std::string& predicted, ChatGateway& gw,
                         const PromptLibrary& prompts,
                         const std::string& model) {
  if (question.empty()) throw ValidationError("llm match: empty question");
  if (ground_truth.empty())
    throw ValidationError("llm match: empty ground truth");

  ChatRequest req;
  req.system_text = prompts.system_text();
  req.content_text = prompts.llm_match(question, ground_truth, predicted);
  req.model_tag = model;

  auto grade = parse_grade(gw.chat(req).text);
  if (!grade) {
    req.content_text +=
        "\n\nThe previous reply could not be parsed. Answer with a single "
        "integer between 1 and 5.";
    grade = parse_grade(gw.chat(req).text);
  }
  if (!grade) {
    warn("llm match: unparseable grade twice, scoring 0");
    return {0.0, 0, false};
  }
  return {100.0 * (*grade - 1) / 4.0, *grade, true};
}

namespace {

struct PlyProp {
  std::string name;
  int size = 0;
  bool is_float = false;
  bool is_signed = false;
};

int prop_size(const std::string& type, bool& is_float, bool& is_signed) {
  if (type == "float" || type == "float32") {
    is_float = true;
    return 4;
  }
  if (type == "double" || type == "float64") {
    is_float = true;
    return 8;
  }
  is_float = false;
  is_signed = type[0] != 'u';
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8")
    return 1;
  if (type == "short" || type == "ushort" || type == "int16" ||
      type == "uint16")
    return 2;
  if (type == "int" || type == "uint" || type == "int32" || type == "uint32")
    return 4;
  return 0;
}

double read_scalar(const uint8_t* p, const PlyProp& prop) {
  if (prop.is_float) {
    if (prop.size == 4) {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
    double d;
    std::memcpy(&d, p, 8);
    return d;
  }
  int64_t v = 0;
  if (prop.size == 1)
    v = prop.is_signed ? static_cast<int64_t>(*reinterpret_cast<const int8_t*>(p))
                       : static_cast<int64_t>(*p);
  else if (prop.size == 2) {
    if (prop.is_signed) {
      int16_t x;
      std::memcpy(&x, p, 2);
      v = x;
    } else {
      uint16_t x;
      std::memcpy(&x, p, 2);
      v = x;
    }
  } else {
    if (prop.is_signed) {
      int32_t x;
      std::memcpy(&x, p, 4);
      v = x;
    } else {
      uint32_t x;
      std::memcpy(&x, p, 4);
      v = x;
    }
  }
  return static_cast<double>(v);
}

}  // namespace

std::vector<LabeledPoint> load_labeled_points(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);

  std::string line;
  std::getline(in, line);
  if (line != "ply") throw FormatError(path + ": not a ply file");

  size_t count = 0;
  bool have_format = false, have_vertex = false, header_done = false;
  std::vector<PlyProp> props;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty() || tok[0] == "comment") continue;
    if (tok[0] == "format") {
      if (tok.size() < 3 || tok[1] != "binary_little_endian" ||
          tok[2] != "1.0")
        throw FormatError(path + ": unsupported ply format");
      have_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() == 3 && tok[1] == "vertex") {
        count = std::stoul(tok[2]);
        have_vertex = true;
      } else {
        throw FormatError(path + ": unsupported ply element '" + line + "'");
      }
    } else if (tok[0] == "property") {
      if (!have_vertex)
        throw FormatError(path + ": property before vertex element");
      if (tok.size() != 3)
        throw FormatError(path + ": unsupported property '" + line + "'");
      PlyProp p;
      p.name = tok[2];
      p.size = prop_size(tok[1], p.is_float, p.is_signed);
      if (p.size == 0)
        throw FormatError(path + ": unsupported property type '" + tok[1] +
                          "'");
      props.push_back(p);
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

  int ix = -1, iy = -1, iz = -1, ii = -1;
  size_t stride = 0;
  std::vector<size_t> offsets;
  for (size_t k = 0; k < props.size(); ++k) {
    offsets.push_back(stride);
    stride += props[k].size;
    if (props[k].name == "x") ix = static_cast<int>(k);
    if (props[k].name == "y") iy = static_cast<int>(k);
    if (props[k].name == "z") iz = static_cast<int>(k);
    if (props[k].name == "instance") ii = static_cast<int>(k);
  }
  if (ix < 0 || iy < 0 || iz < 0)
    throw FormatError(path + ": missing required x/y/z properties");
  if (ii < 0)
    throw FormatError(path + ": missing required property 'instance'");
  if (props[ii].is_float)
    throw FormatError(path + ": instance property must be an integer type");

  std::vector<uint8_t> buf(stride * count);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (static_cast<size_t>(in.gcount()) != buf.size())
    throw FormatError(path + ": truncated vertex data");

  std::vector<LabeledPoint> out(count);
  for (size_t v = 0; v < count; ++v) {
    const uint8_t* rec = buf.data() + v * stride;
    out[v].p = {read_scalar(rec + offsets[ix], props[ix]),
                read_scalar(rec + offsets[iy], props[iy]),
                read_scalar(rec + offsets[iz], props[iz])};
    out[v].instance =
        static_cast<int32_t>(read_scalar(rec + offsets[ii], props[ii]));
  }
  return out;
}

void save_labeled_points(const std::string& path,
                         std::span<const LabeledPoint> points) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open file for writing: " + path);
  out << "ply\nformat binary_little_endian 1.0\nelement vertex "
      << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property int instance\nend_header\n";
  for (const LabeledPoint& lp : points) {
    float xyz[3] = {static_cast<float>(lp.p.x()), static_cast<float>(lp.p.y()),
                    static_cast<float>(lp.p.z())};
    out.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
    out.write(reinterpret_cast<const char*>(&lp.instance), 4);
  }
  out.flush();
  if (!out) throw Error("short write: " + path);
}

}  // namespace sq
