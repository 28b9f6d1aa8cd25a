#include "atalp/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace atalp {

namespace {

const std::vector<ArchitectureSpec>& registry() {
  static const std::vector<ArchitectureSpec> specs = {
      {"smallcnn4", 3, {16, 32, 64, 128}, 1},
      // Transfer-attack surrogate: same family, narrower and twice as deep.
      {"smallcnn4_deep", 3, {12, 24, 48, 96}, 2},
      // For gradient checks and fast tests.
      {"tinycnn4", 3, {2, 3, 4, 5}, 1},
  };
  return specs;
}

// Same-size 3x3 convolution. Column layout: row (ky*3 + kx)*C + c, column
// (b*H + y)*W + x. Out-of-image taps are zero.
template <typename Scalar>
void im2col(const MatrixX<Scalar>& in, Index batch, Index channels, Index height, Index width,
            MatrixX<Scalar>& cols) {
  cols.setZero(9 * channels, batch * height * width);
  for (Index b = 0; b < batch; ++b) {
    for (Index oy = 0; oy < height; ++oy) {
      for (Index ox = 0; ox < width; ++ox) {
        Scalar* dst = cols.data() + ((b * height + oy) * width + ox) * 9 * channels;
        for (Index ky = 0; ky < 3; ++ky) {
          const Index iy = oy + ky - 1;
          if (iy < 0 || iy >= height) continue;
          for (Index kx = 0; kx < 3; ++kx) {
            const Index ix = ox + kx - 1;
            if (ix < 0 || ix >= width) continue;
            const Scalar* src = in.data() + ((b * height + iy) * width + ix) * channels;
            std::copy_n(src, channels, dst + (ky * 3 + kx) * channels);
          }
        }
      }
    }
  }
}

template <typename Scalar>
MatrixX<Scalar> col2im(const MatrixX<Scalar>& cols, Index batch, Index channels, Index height, Index width) {
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(channels, batch * height * width);
  for (Index b = 0; b < batch; ++b) {
    for (Index oy = 0; oy < height; ++oy) {
      for (Index ox = 0; ox < width; ++ox) {
        const Scalar* src = cols.data() + ((b * height + oy) * width + ox) * 9 * channels;
        for (Index ky = 0; ky < 3; ++ky) {
          const Index iy = oy + ky - 1;
          if (iy < 0 || iy >= height) continue;
          for (Index kx = 0; kx < 3; ++kx) {
            const Index ix = ox + kx - 1;
            if (ix < 0 || ix >= width) continue;
            Scalar* dst = out.data() + ((b * height + iy) * width + ix) * channels;
            const Scalar* s = src + (ky * 3 + kx) * channels;
            for (Index c = 0; c < channels; ++c) dst[c] += s[c];
          }
        }
      }
    }
  }
  return out;
}

// 2x2 stride-2 max pool. `argmax` records the source column of every output
// element; ties go to the first window position in row-major order.
template <typename Scalar>
MatrixX<Scalar> max_pool2(const MatrixX<Scalar>& in, Index batch, Index height, Index width, PoolIndex& argmax) {
  const Index channels = in.rows(), oh = height / 2, ow = width / 2;
  MatrixX<Scalar> out(channels, batch * oh * ow);
  argmax.resize(channels, batch * oh * ow);
  for (Index b = 0; b < batch; ++b)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        const Index o = (b * oh + oy) * ow + ox;
        const Index top = (b * height + 2 * oy) * width + 2 * ox;
        const Index src[4] = {top, top + 1, top + width, top + width + 1};
        for (Index c = 0; c < channels; ++c) {
          Index best = src[0];
          for (int k = 1; k < 4; ++k)
            if (in(c, src[k]) > in(c, best)) best = src[k];
          out(c, o) = in(c, best);
          argmax(c, o) = best;
        }
      }
  return out;
}

template <typename Scalar>
MatrixX<Scalar> max_unpool2(const MatrixX<Scalar>& dout, const PoolIndex& argmax, Index in_cols) {
  MatrixX<Scalar> din = MatrixX<Scalar>::Zero(dout.rows(), in_cols);
  for (Index o = 0; o < dout.cols(); ++o)
    for (Index c = 0; c < dout.rows(); ++c) din(c, argmax(c, o)) += dout(c, o);
  return din;
}

template <typename Scalar>
MatrixX<Scalar> global_average_pool(const Tensor<Scalar>& t) {
  MatrixX<Scalar> pooled(t.channels(), t.batch());
  for (Index b = 0; b < t.batch(); ++b) pooled.col(b) = t.example(b).rowwise().mean();
  return pooled;
}

}  // namespace

const ArchitectureSpec& find_architecture(std::string_view id) {
  for (const auto& spec : registry())
    if (spec.id == id) return spec;
  throw ConfigError("unknown architecture '" + std::string(id) + "'");
}

std::vector<std::string> registered_architectures() {
  std::vector<std::string> ids;
  for (const auto& spec : registry()) ids.push_back(spec.id);
  return ids;
}

const std::array<std::string, kNumGroups>& default_group_names() {
  static const std::array<std::string, kNumGroups> names{"group0", "group1", "group2", "group3"};
  return names;
}

template <typename Scalar>
Model<Scalar>::Model(const ArchitectureSpec& spec, Index num_classes)
    : spec_(spec), num_classes_(num_classes), group_names_(default_group_names()) {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (spec.convs_per_group < 1) throw ConfigError("convs_per_group must be >= 1");
  Index in_c = spec.input_channels;
  for (int g = 0; g < kNumGroups; ++g) {
    const Index out_c = spec.widths[static_cast<std::size_t>(g)];
    for (int u = 0; u < spec.convs_per_group; ++u) {
      const std::string prefix = "group" + std::to_string(g) + ".conv" + std::to_string(u);
      params_.push_back({prefix + ".weight", {out_c, 3, 3, in_c}, MatrixX<Scalar>::Zero(out_c, 9 * in_c)});
      params_.push_back({prefix + ".scale", {out_c}, MatrixX<Scalar>::Zero(out_c, 1)});
      params_.push_back({prefix + ".shift", {out_c}, MatrixX<Scalar>::Zero(out_c, 1)});
      in_c = out_c;
    }
  }
  params_.push_back({"head.weight", {num_classes, in_c}, MatrixX<Scalar>::Zero(num_classes, in_c)});
  params_.push_back({"head.bias", {num_classes}, MatrixX<Scalar>::Zero(num_classes, 1)});
}

template <typename Scalar>
Index Model<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& p : params_) n += p.values.size();
  return n;
}

template <typename Scalar>
void Model<Scalar>::check_input(const Tensor<Scalar>& x) const {
  if (x.channels() != spec_.input_channels)
    throw InputError(spec_.id + " expects " + std::to_string(spec_.input_channels) + " input channels, got " +
                     x.shape_string());
  if (x.height() < 16 || x.width() < 16 || x.height() % 16 != 0 || x.width() % 16 != 0)
    throw InputError(spec_.id + " expects spatial size divisible by 16, got " + x.shape_string());
  if (x.batch() < 1) throw InputError("empty batch");
}

template <typename Scalar>
ForwardTrace<Scalar> Model<Scalar>::forward_trace(const Tensor<Scalar>& x) const {
  check_input(x);
  Trace trace;
  trace.batch = x.batch();
  trace.units.reserve(static_cast<std::size_t>(unit_count()));
  MatrixX<Scalar> current = x.matrix();
  Index channels = x.channels(), height = x.height(), width = x.width();
  std::size_t p = 0;
  for (int g = 0; g < kNumGroups; ++g) {
    for (int u = 0; u < spec_.convs_per_group; ++u) {
      UnitCache<Scalar> cache;
      cache.in_channels = channels;
      cache.in_height = height;
      cache.in_width = width;
      im2col(current, x.batch(), channels, height, width, cache.columns);
      const auto& weight = params_[p].values;
      const auto scale = params_[p + 1].values.col(0).array();
      const auto shift = params_[p + 2].values.col(0).array();
      cache.conv_out.noalias() = weight * cache.columns;
      cache.affine_out = (cache.conv_out.array().colwise() * scale).colwise() + shift;
      current = cache.affine_out.cwiseMax(Scalar(0));
      channels = weight.rows();
      trace.units.push_back(std::move(cache));
      p += 3;
    }
    trace.pool_argmax.emplace_back();
    current = max_pool2(current, x.batch(), height, width, trace.pool_argmax.back());
    height /= 2;
    width /= 2;
    Tensor<Scalar> tap(x.batch(), channels, height, width);
    tap.matrix() = current;
    trace.group_activations.push_back(std::move(tap));
  }
  trace.pooled = global_average_pool(trace.group_activations.back());
  const auto& hw = params_[p].values;
  const auto& hb = params_[p + 1].values;
  trace.logits = ((hw * trace.pooled).colwise() + hb.col(0)).transpose();
  return trace;
}

template <typename Scalar>
ForwardResult<Scalar> Model<Scalar>::forward(const Tensor<Scalar>& x) const {
  Trace trace = forward_trace(x);
  return {std::move(trace.logits), std::move(trace.group_activations)};
}

template <typename Scalar>
Gradients<Scalar> Model<Scalar>::backward(const Trace& trace, const MatrixX<Scalar>& logit_grad,
                                          std::span<const Tensor<Scalar>> group_grads,
                                          GradientRequest request) const {
  const Index batch = trace.batch;
  if (logit_grad.rows() != batch || logit_grad.cols() != num_classes_)
    throw InputError("logit gradient must be " + std::to_string(batch) + "x" + std::to_string(num_classes_));
  if (!group_grads.empty() && group_grads.size() != static_cast<std::size_t>(kNumGroups))
    throw InputError("group gradients must be empty or one per group");
  for (std::size_t g = 0; g < group_grads.size(); ++g)
    if (!group_grads[g].empty() && !group_grads[g].same_shape(trace.group_activations[g]))
      throw InputError("group gradient " + std::to_string(g) + " has shape " + group_grads[g].shape_string() +
                       ", expected " + trace.group_activations[g].shape_string());

  Gradients<Scalar> grads;
  if (request.parameters) {
    grads.parameters.reserve(params_.size());
    for (const auto& p : params_) grads.parameters.push_back(MatrixX<Scalar>::Zero(p.values.rows(), p.values.cols()));
  }

  const std::size_t hp = head_weight_index();
  const MatrixX<Scalar> dlogits_t = logit_grad.transpose();  // K x B
  if (request.parameters) {
    grads.parameters[hp].noalias() = dlogits_t * trace.pooled.transpose();
    grads.parameters[hp + 1] = dlogits_t.rowwise().sum();
  }
  const MatrixX<Scalar> dpooled = params_[hp].values.transpose() * dlogits_t;  // C3 x B

  const Tensor<Scalar>& last = trace.group_activations.back();
  const Index hw = last.pixels_per_example();
  MatrixX<Scalar> dcur(last.channels(), batch * hw);
  for (Index b = 0; b < batch; ++b)
    dcur.middleCols(b * hw, hw) = (dpooled.col(b) / Scalar(hw)).replicate(1, hw);

  int unit = unit_count() - 1;
  for (int g = kNumGroups - 1; g >= 0; --g) {
    if (!group_grads.empty() && !group_grads[static_cast<std::size_t>(g)].empty())
      dcur += group_grads[static_cast<std::size_t>(g)].matrix();
    {
      const auto& cache = trace.units[static_cast<std::size_t>(unit)];
      dcur = max_unpool2(dcur, trace.pool_argmax[static_cast<std::size_t>(g)],
                         batch * cache.in_height * cache.in_width);
    }
    for (int u = spec_.convs_per_group - 1; u >= 0; --u, --unit) {
      const auto& cache = trace.units[static_cast<std::size_t>(unit)];
      const std::size_t p = static_cast<std::size_t>(3 * unit);
      const auto& weight = params_[p].values;
      const MatrixX<Scalar> dact = (cache.affine_out.array() > Scalar(0)).select(dcur.array(), Scalar(0)).matrix();
      if (request.parameters) {
        grads.parameters[p + 1] = dact.cwiseProduct(cache.conv_out).rowwise().sum();
        grads.parameters[p + 2] = dact.rowwise().sum();
      }
      const MatrixX<Scalar> dconv = dact.array().colwise() * params_[p + 1].values.col(0).array();
      if (request.parameters) grads.parameters[p].noalias() = dconv * cache.columns.transpose();
      if (unit == 0 && !request.input) break;
      const MatrixX<Scalar> dcols = weight.transpose() * dconv;
      dcur = col2im(dcols, batch, cache.in_channels, cache.in_height, cache.in_width);
    }
  }
  if (request.input) {
    const auto& first = trace.units.front();
    grads.input = Tensor<Scalar>(batch, first.in_channels, first.in_height, first.in_width);
    grads.input.matrix() = std::move(dcur);
  }
  return grads;
}

template <typename Scalar>
Tensor<Scalar> Model<Scalar>::run_group(int group, const Tensor<Scalar>& in) const {
  if (group < 0 || group >= kNumGroups) throw InputError("group index out of range");
  const Index expected_c = group == 0 ? spec_.input_channels : spec_.widths[static_cast<std::size_t>(group - 1)];
  if (in.channels() != expected_c) throw InputError("group input has wrong channel count");
  MatrixX<Scalar> current = in.matrix();
  Index channels = in.channels(), height = in.height(), width = in.width();
  MatrixX<Scalar> cols;
  for (int u = 0; u < spec_.convs_per_group; ++u) {
    const std::size_t p = static_cast<std::size_t>(3 * (group * spec_.convs_per_group + u));
    im2col(current, in.batch(), channels, height, width, cols);
    const MatrixX<Scalar> conv = params_[p].values * cols;
    current = ((conv.array().colwise() * params_[p + 1].values.col(0).array()).colwise() +
               params_[p + 2].values.col(0).array())
                  .cwiseMax(Scalar(0));
    channels = params_[p].values.rows();
  }
  if (height % 2 != 0 || width % 2 != 0) throw InputError("group input needs even spatial size");
  PoolIndex argmax;
  Tensor<Scalar> out(in.batch(), channels, height / 2, width / 2);
  out.matrix() = max_pool2(current, in.batch(), height, width, argmax);
  return out;
}

template <typename Scalar>
MatrixX<Scalar> Model<Scalar>::head(const Tensor<Scalar>& last_group) const {
  const std::size_t hp = head_weight_index();
  if (last_group.channels() != params_[hp].values.cols()) throw InputError("head input has wrong channel count");
  const MatrixX<Scalar> pooled = global_average_pool(last_group);
  return ((params_[hp].values * pooled).colwise() + params_[hp + 1].values.col(0)).transpose();
}

template <typename Scalar>
Model<Scalar> build_model(std::string_view architecture_id, Index num_classes, std::uint64_t seed) {
  Model<Scalar> model(find_architecture(architecture_id), num_classes);
  std::mt19937_64 rng(seed);
  auto& params = model.parameters();
  const std::size_t head = params.size() - 2;
  for (std::size_t i = 0; i < head; i += 3) {
    auto& w = params[i].values;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(w.cols())));
    for (Index j = 0; j < w.size(); ++j) w(j) = static_cast<Scalar>(dist(rng));
    params[i + 1].values.setOnes();
  }
  auto& hw = params[head].values;
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(hw.cols())));
  for (Index j = 0; j < hw.size(); ++j) hw(j) = static_cast<Scalar>(dist(rng));
  model.metadata()["init_seed"] = std::to_string(seed);
  return model;
}

template class Model<float>;
template class Model<double>;
template Model<float> build_model<float>(std::string_view, Index, std::uint64_t);
template Model<double> build_model<double>(std::string_view, Index, std::uint64_t);

}  // namespace atalp
