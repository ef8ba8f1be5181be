#include "tarvis/viz.hpp"

#include <Eigen/Eigenvalues>

#include <filesystem>
#include <fstream>

#include "tarvis/image.hpp"

namespace tarvis {

namespace fs = std::filesystem;

Tensor pca_project_2d(const Tensor& rows) {
  const Index N = rows.dim(0), D = rows.dim(1);
  Eigen::MatrixXd X(N, D);
  for (Index i = 0; i < N; ++i)
    for (Index d = 0; d < D; ++d) X(i, d) = rows.at(i, d);
  const Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  Eigen::MatrixXd cov = X.transpose() * X / std::max<double>(1.0, double(N - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  Eigen::MatrixXd axes(D, 2);
  axes.col(0) = es.eigenvectors().col(D - 1);
  axes.col(1) = D > 1 ? es.eigenvectors().col(D - 2) : es.eigenvectors().col(D - 1);
  for (int c = 0; c < 2; ++c) {
    Index arg = 0;
    axes.col(c).cwiseAbs().maxCoeff(&arg);
    if (axes(arg, c) < 0) axes.col(c) = -axes.col(c);  // fix the sign ambiguity
  }
  Eigen::MatrixXd Y = X * axes;
  Tensor out({N, 2});
  for (Index i = 0; i < N; ++i) {
    out.at(i, (Index)0) = Y(i, 0);
    out.at(i, (Index)1) = Y(i, 1);
  }
  return out;
}

namespace {

const char* role_name(QueryRole r) {
  switch (r) {
    case QueryRole::Semantic: return "semantic";
    case QueryRole::Instance: return "instance";
    case QueryRole::Background: return "background";
    case QueryRole::Object: return "object";
  }
  return "?";
}

void role_color(QueryRole r, std::uint8_t& cr, std::uint8_t& cg, std::uint8_t& cb) {
  switch (r) {
    case QueryRole::Semantic: cr = 40, cg = 90, cb = 220; break;
    case QueryRole::Instance: cr = 240, cg = 150, cb = 30; break;
    case QueryRole::Object: cr = 210, cg = 40, cb = 40; break;
    default: cr = 30, cg = 30, cb = 30; break;
  }
}

void draw_dot(ImageRgb8& img, double fy, double fx, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const Index cy = (Index)std::lround(fy), cx = (Index)std::lround(fx);
  for (Index y = cy - 3; y <= cy + 3; ++y)
    for (Index x = cx - 3; x <= cx + 3; ++x) {
      if (y < 0 || y >= img.height || x < 0 || x >= img.width) continue;
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) > 9) continue;
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
}

double spread(const Tensor& rows) {
  const Index N = rows.dim(0), D = rows.dim(1);
  std::vector<double> mean((std::size_t)D, 0.0);
  for (Index i = 0; i < N; ++i)
    for (Index d = 0; d < D; ++d) mean[(std::size_t)d] += rows.at(i, d) / double(N);
  double s = 0;
  for (Index i = 0; i < N; ++i) {
    double d2 = 0;
    for (Index d = 0; d < D; ++d) {
      const double v = rows.at(i, d) - mean[(std::size_t)d];
      d2 += v * v;
    }
    s += std::sqrt(d2);
  }
  return N > 0 ? s / double(N) : 0.0;
}

struct TaggedQuery {
  RoleTag role;
  std::string task;
};

}  // namespace

QueryVizStats viz_queries(const TarvisModel& model, const VideoClip& video,
                          const std::vector<Task>& tasks, const VideoTargets& targets,
                          const std::string& out_dir, std::uint64_t seed) {
  NoGradGuard no_grad;
  fs::create_directories(out_dir);
  FeaturePyramid pyr = model.features(make_const<double>(video.rgb));

  std::vector<TaggedQuery> tags;
  std::vector<Tensor> first_rows, last_rows;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    Rng rng = Rng::stream(seed, (std::uint64_t)k + 1);
    TaskTargets tt;
    tt.task = tasks[k];
    tt.dataset = targets.dataset;
    if (tasks[k] == Task::VOS) {
      for (const auto& cue : targets.cues) tt.mask_cues.push_back({cue.frame, cue.mask});
    } else if (tasks[k] == Task::PET) {
      for (const auto& cue : targets.cues)
        tt.point_cues.push_back({cue.frame, cue.point_y, cue.point_x});
    }
    TargetQuerySet qs = model.build_queries(tt, pyr, rng);
    auto [refined, seg] = model.decode(qs, pyr, targets.dataset);
    first_rows.push_back(qs.queries->value);
    last_rows.push_back(refined.queries->value);
    for (const auto& role : qs.roles) tags.push_back({role, task_name(tasks[k])});
  }

  const Index D = first_rows[0].cols();
  Index total = 0;
  for (const auto& r : first_rows) total += r.dim(0);
  Tensor first({total, D}), last({total, D});
  Index off = 0;
  for (std::size_t k = 0; k < first_rows.size(); ++k) {
    const Index n = first_rows[k].dim(0);
    first.array().segment(off * D, n * D) = first_rows[k].array();
    last.array().segment(off * D, n * D) = last_rows[k].array();
    off += n;
  }

  Tensor proj = pca_project_2d(last);
  std::ofstream csv(fs::path(out_dir) / "queries.csv");
  if (!csv) throw std::runtime_error("cannot write queries.csv in " + out_dir);
  csv << "x,y,role,id,task\n";
  csv.precision(10);
  for (Index i = 0; i < total; ++i) {
    const auto& tag = tags[(std::size_t)i];
    csv << proj.at(i, (Index)0) << "," << proj.at(i, (Index)1) << "," << role_name(tag.role.role)
        << "," << tag.role.a << "," << tag.task << "\n";
  }

  // scatter image: normalized to the bounding square with a margin
  ImageRgb8 img(512, 512);
  std::fill(img.pixels.begin(), img.pixels.end(), (std::uint8_t)255);
  double lo = 1e300, hi = -1e300;
  for (Index i = 0; i < proj.size(); ++i) {
    lo = std::min(lo, proj[i]);
    hi = std::max(hi, proj[i]);
  }
  const double range = hi - lo > 1e-12 ? hi - lo : 1.0;
  for (Index i = 0; i < total; ++i) {
    const double fx = 20 + 472 * (proj.at(i, (Index)0) - lo) / range;
    const double fy = 20 + 472 * (proj.at(i, (Index)1) - lo) / range;
    std::uint8_t r, g, b;
    role_color(tags[(std::size_t)i].role.role, r, g, b);
    draw_dot(img, fy, fx, r, g, b);
  }
  write_png((fs::path(out_dir) / "queries.png").string(), img);

  QueryVizStats stats;
  stats.rows = total;
  stats.first_layer_spread = spread(first);
  stats.last_layer_spread = spread(last);
  return stats;
}

void viz_overlay(const VideoResult& result, const VideoClip& video, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const Index T = video.frames(), H = video.height(), W = video.width();
  auto id_color = [](int id, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b) {
    const double hue = 0.61803398875 * double(id + 1);
    const double h6 = (hue - std::floor(hue)) * 6.0;
    const int i = (int)h6 % 6;
    const double f = h6 - std::floor(h6);
    const double q = 1 - f;
    double rr = 0, gg = 0, bb = 0;
    switch (i) {
      case 0: rr = 1, gg = f, bb = 0; break;
      case 1: rr = q, gg = 1, bb = 0; break;
      case 2: rr = 0, gg = 1, bb = f; break;
      case 3: rr = 0, gg = q, bb = 1; break;
      case 4: rr = f, gg = 0, bb = 1; break;
      default: rr = 1, gg = 0, bb = q; break;
    }
    r = (std::uint8_t)(rr * 255);
    g = (std::uint8_t)(gg * 255);
    b = (std::uint8_t)(bb * 255);
  };

  for (Index t = 0; t < T; ++t) {
    ImageRgb8 img = frame_to_image(video.rgb, t);
    auto blend_group = [&](const std::vector<TrackResult>& tracks, int id_offset) {
      for (const auto& tr : tracks) {
        if ((Index)tr.masks.size() <= t || tr.masks[(std::size_t)t].empty()) continue;
        std::uint8_t r, g, b;
        id_color(tr.id + id_offset, r, g, b);
        const auto& m = tr.masks[(std::size_t)t];
        for (Index i = 0; i < H * W; ++i) {
          if (!m[(std::size_t)i]) continue;
          auto& pr = img.pixels[(std::size_t)(i * 3 + 0)];
          auto& pg = img.pixels[(std::size_t)(i * 3 + 1)];
          auto& pb = img.pixels[(std::size_t)(i * 3 + 2)];
          pr = (std::uint8_t)((pr + 2 * r) / 3);
          pg = (std::uint8_t)((pg + 2 * g) / 3);
          pb = (std::uint8_t)((pb + 2 * b) / 3);
        }
      }
    };
    blend_group(result.tracks, 0);
    blend_group(result.object_tracks, 1000);
    char name[16];
    std::snprintf(name, sizeof(name), "%05d.png", (int)t);
    write_png((fs::path(out_dir) / name).string(), img);
  }
}

}  // namespace tarvis
