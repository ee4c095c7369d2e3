#include "cenet/model.hpp"

#include "cenet/errors.hpp"

namespace cenet {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("model: " + m); };
  if (patch_size < 1) fail("patch_size must be >= 1");
  if (image_height < 1 || image_width < 1) fail("image size must be positive");
  if (image_height % patch_size || image_width % patch_size)
    fail("image size " + std::to_string(image_height) + "x" + std::to_string(image_width) +
         " is not divisible by patch size " + std::to_string(patch_size));
  if (shared_depth < 1 || reid_depth < 1 || decoder_depth < 1) fail("depths must be >= 1");
  if (embed_dim < 1 || heads < 1 || embed_dim % heads) fail("embed_dim must be a positive multiple of heads");
  if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
  if (relight_channels < 1) fail("relight_channels must be >= 1");
  if (num_classes[0] < 0 || num_classes[1] < 0) fail("num_classes must be >= 0");
  if (num_classes[0] == 0 && num_classes[1] == 0) fail("at least one domain needs num_classes > 0");
  if (num_cameras[0] < 1 || num_cameras[1] < 1) fail("num_cameras must be >= 1");
  if (!(camera_coefficient >= 0)) fail("camera_coefficient must be >= 0");
}

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.num_classes = {1, 1};
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.image_height = 64;
  c.image_width = 32;
  c.patch_size = 8;
  c.embed_dim = 64;
  c.heads = 4;
  c.shared_depth = 2;
  c.reid_depth = 2;
  c.decoder_depth = 2;
  c.relight_channels = 16;
  c.input_norm = InputNorm::instance;
  c.num_classes = {1, 1};
  return c;
}

const char* input_norm_name(InputNorm n) { return n == InputNorm::fixed ? "fixed" : "instance"; }

InputNorm parse_input_norm(const std::string& name) {
  if (name == "fixed") return InputNorm::fixed;
  if (name == "instance") return InputNorm::instance;
  throw std::invalid_argument("unknown input_norm '" + name + "' (fixed|instance)");
}

const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::shared: return "shared";
    case ParamGroup::reid: return "reid";
    case ParamGroup::relight: return "relight";
  }
  return "?";
}

}  // namespace cenet
