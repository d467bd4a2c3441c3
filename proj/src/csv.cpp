#include <charconv>
#include <cmath>
#include <fstream>

#include "dct/analysis.hpp"
#include "dct/errors.hpp"

namespace dct {
namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw ArtifactError("failed writing '" + path.string() + "'");
}

}  // namespace

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

std::string format_number(float value) {
  if (!std::isfinite(value)) return format_number(static_cast<double>(value));
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  auto out = open_csv(path);
  out << "batch_idx,n_samples,n_selected_pass1,n_selected_pass2,loss,batch_accuracy,running_accuracy,skipped\n";
  for (const auto& r : rows) {
    out << r.batch_idx << ',' << r.n_samples << ',' << r.n_selected_first << ',' << r.n_selected_second << ','
        << (r.loss ? format_number(*r.loss) : "") << ',' << format_number(r.batch_accuracy) << ','
        << format_number(r.running_accuracy) << ',' << (r.skipped ? 1 : 0) << '\n';
  }
  finish(out, path);
}

void write_embeddings_csv(const std::filesystem::path& path, const std::vector<EmbeddingRow>& rows) {
  auto out = open_csv(path);
  out << "sample_id,domain,label,layer";
  const std::size_t width = rows.empty() ? 0 : rows.front().features.size();
  for (std::size_t j = 0; j < width; ++j) out << ",f" << j;
  out << '\n';
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.domain << ',' << r.label << ',' << r.layer;
    for (float v : r.features) out << ',' << format_number(v);
    out << '\n';
  }
  finish(out, path);
}

void write_profile_csv(const std::filesystem::path& path, const std::vector<ProfileRow>& rows) {
  auto out = open_csv(path);
  out << "severity,layer,head,mean_distance_px\n";
  for (const auto& r : rows) {
    out << r.label << ',' << r.layer << ',' << r.head << ',' << format_number(r.distance) << '\n';
  }
  finish(out, path);
}

void write_rollout_csv(const std::filesystem::path& path, const std::vector<RolloutRow>& rows) {
  auto out = open_csv(path);
  out << "sample_id,label,degenerate";
  const std::size_t width = rows.empty() ? 0 : rows.front().saliency.size();
  for (std::size_t j = 0; j < width; ++j) out << ",p" << j;
  out << '\n';
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.label << ',' << (r.degenerate ? 1 : 0);
    for (double v : r.saliency) out << ',' << format_number(v);
    out << '\n';
  }
  finish(out, path);
}

}  // namespace dct
