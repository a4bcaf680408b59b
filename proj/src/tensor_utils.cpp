#include "stylemap/tensor_utils.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cstring>
#include <fstream>

namespace stylemap {

torch::Tensor to_tensor(const StatMap& map) {
  validate(map);
  auto t = torch::empty({1, map.shape.nz, map.shape.ny, map.shape.nx}, torch::kFloat32);
  std::memcpy(t.data_ptr<float>(), map.voxels.data(), map.voxels.size() * sizeof(float));
  return t;
}

torch::Tensor stack_maps(std::span<const StatMap* const> maps) {
  if (maps.empty()) throw Error(ErrorCode::EmptyInput, "no maps to stack");
  const Shape s = maps.front()->shape;
  auto t = torch::empty({static_cast<std::int64_t>(maps.size()), 1, s.nz, s.ny, s.nx}, torch::kFloat32);
  auto* dst = t.data_ptr<float>();
  for (const auto* m : maps) {
    validate(*m);
    if (!(m->shape == s)) throw Error(ErrorCode::ShapeMismatch, "stack_maps: mixed shapes");
    std::memcpy(dst, m->voxels.data(), m->voxels.size() * sizeof(float));
    dst += m->voxels.size();
  }
  return t;
}

torch::Tensor stack_maps(std::span<const StatMap> maps) {
  std::vector<const StatMap*> ptrs;
  for (const auto& m : maps) ptrs.push_back(&m);
  return stack_maps(std::span<const StatMap* const>(ptrs));
}

torch::Tensor mask_tensor(const Mask& mask) {
  auto t = torch::empty({1, 1, mask.shape.nz, mask.shape.ny, mask.shape.nx}, torch::kFloat32);
  auto* p = t.data_ptr<float>();
  for (std::size_t i = 0; i < mask.voxels.size(); ++i) p[i] = mask(i) ? 1.0f : 0.0f;
  return t;
}

StatMap from_tensor(const torch::Tensor& t, const StatMap& like) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  if (static_cast<std::size_t>(c.numel()) != like.shape.voxels()) {
    throw Error(ErrorCode::ShapeMismatch, "tensor has " + std::to_string(c.numel()) +
                                              " elements, map shape " + to_string(like.shape));
  }
  StatMap out = like;
  std::memcpy(out.voxels.data(), c.data_ptr<float>(), out.voxels.size() * sizeof(float));
  return out;
}

int batches_per_epoch(std::size_t n, int batch) {
  if (batch < 1) throw Error(ErrorCode::ConfigInvalid, "batch must be >= 1");
  const std::size_t b = static_cast<std::size_t>(batch);
  std::size_t count = (n + b - 1) / b;
  if (n > 1 && n % b == 1) --count;
  return static_cast<int>(count);
}

torch::Generator make_generator(std::uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

void use_channels_last(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.parameters()) {
    if (p.dim() == 5) p.set_data(p.data().contiguous(at::MemoryFormat::ChannelsLast3d));
  }
}

torch::Tensor channels_last(const torch::Tensor& x) {
  return x.dim() == 5 ? x.contiguous(at::MemoryFormat::ChannelsLast3d) : x;
}

void save_module(const torch::nn::Module& module, const std::filesystem::path& path) {
  try {
    torch::serialize::OutputArchive archive;
    module.save(archive);
    archive.save_to(path.string());
  } catch (const c10::Error& e) {
    throw Error(ErrorCode::IoFailure, "cannot save weights to " + path.string() + ": " + e.what_without_backtrace());
  }
}

void load_module(torch::nn::Module& module, const std::filesystem::path& path) {
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    module.load(archive);
    use_channels_last(module);
  } catch (const c10::Error& e) {
    throw Error(ErrorCode::IoFailure, "cannot load weights from " + path.string() + ": " + e.what_without_backtrace());
  }
}

void write_json_atomic(const nlohmann::json& j, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
    out << j.dump(2) << "\n";
    if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot move " + tmp.string() + ": " + ec.message());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
}

std::vector<torch::Tensor> clone_parameters(const torch::nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (const auto& p : module.parameters()) out.push_back(p.detach().clone());
  for (const auto& b : module.buffers()) out.push_back(b.detach().clone());
  return out;
}

bool parameters_equal(const torch::nn::Module& module, const std::vector<torch::Tensor>& snapshot) {
  std::vector<torch::Tensor> now;
  for (const auto& p : module.parameters()) now.push_back(p.detach());
  for (const auto& b : module.buffers()) now.push_back(b.detach());
  if (now.size() != snapshot.size()) return false;
  for (std::size_t i = 0; i < now.size(); ++i) {
    if (!torch::equal(now[i], snapshot[i])) return false;
  }
  return true;
}

}  // namespace stylemap
