#include "tcaq/tcaq.h"

#include <cstring>
#include <string>

#include "pipeline/pipeline.hpp"

using namespace tcaq;

struct tcaq_config {
  RunConfig cfg;
};

struct tcaq_model {
  ModelBundle bundle;
  std::string loaded_from;
};

namespace {

thread_local std::string g_last_error;

tcaq_status fail(tcaq_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// exception -> status mapping; the CLI turns these into exit codes
template <typename Fn>
tcaq_status guarded(Fn&& fn) {
  try {
    fn();
    return TCAQ_OK;
  } catch (const ConfigError& e) {
    return fail(TCAQ_ERR_CONFIG, e.what());
  } catch (const NumericError& e) {
    return fail(TCAQ_ERR_NUMERIC, e.what());
  } catch (const MissingArtifactError& e) {
    return fail(TCAQ_ERR_MISSING_ARTIFACT, e.what());
  } catch (const IoError& e) {
    return fail(TCAQ_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(TCAQ_ERR_INTERNAL, e.what());
  }
}

}  // namespace

extern "C" {

const char* tcaq_version(void) { return "1.0.0"; }

const char* tcaq_status_name(tcaq_status s) {
  switch (s) {
    case TCAQ_OK: return "ok";
    case TCAQ_ERR_ARGUMENT: return "argument";
    case TCAQ_ERR_CONFIG: return "config";
    case TCAQ_ERR_NUMERIC: return "numeric";
    case TCAQ_ERR_MISSING_ARTIFACT: return "missing-artifact";
    case TCAQ_ERR_IO: return "io";
    case TCAQ_ERR_INTERNAL: return "internal";
  }
  return "?";
}

const char* tcaq_last_error(void) { return g_last_error.c_str(); }

tcaq_config* tcaq_config_new(void) { return new tcaq_config(); }

void tcaq_config_free(tcaq_config* cfg) { delete cfg; }

tcaq_status tcaq_config_load(tcaq_config* cfg, const char* path) {
  if (!cfg || !path) return fail(TCAQ_ERR_ARGUMENT, "config_load: null argument");
  return guarded([&] { cfg->cfg = load_config_file(path); });
}

tcaq_status tcaq_config_save(const tcaq_config* cfg, const char* path) {
  if (!cfg || !path) return fail(TCAQ_ERR_ARGUMENT, "config_save: null argument");
  return guarded([&] { save_config_file(cfg->cfg, path); });
}

tcaq_status tcaq_config_set(tcaq_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(TCAQ_ERR_ARGUMENT, "config_set: null argument");
  return guarded([&] { config_set(cfg->cfg, key, value); });
}

tcaq_status tcaq_config_get(const tcaq_config* cfg, const char* key, char* buf, size_t buf_len) {
  if (!cfg || !key || !buf) return fail(TCAQ_ERR_ARGUMENT, "config_get: null argument");
  return guarded([&] {
    const std::string v = config_get(cfg->cfg, key);
    if (v.size() + 1 > buf_len) throw Error("config_get: buffer too small for '" + v + "'");
    std::memcpy(buf, v.c_str(), v.size() + 1);
  });
}

size_t tcaq_config_key_count(void) { return config_schema().size(); }

const char* tcaq_config_key(size_t index) {
  const auto& schema = config_schema();
  if (index >= schema.size()) return nullptr;
  return schema[index].key.c_str();
}

tcaq_status tcaq_model_load(const char* path, tcaq_model** out) {
  if (!path || !out) return fail(TCAQ_ERR_ARGUMENT, "model_load: null argument");
  return guarded([&] {
    auto* m = new tcaq_model();
    try {
      m->bundle = load_bundle(path);
      m->loaded_from = path;
    } catch (...) {
      delete m;
      throw;
    }
    *out = m;
  });
}

tcaq_status tcaq_model_save(const tcaq_model* model, const char* path) {
  if (!model || !path) return fail(TCAQ_ERR_ARGUMENT, "model_save: null argument");
  return guarded([&] { save_bundle(model->bundle, nullptr, path); });
}

void tcaq_model_free(tcaq_model* model) { delete model; }

int tcaq_model_is_quantized(const tcaq_model* model) {
  return model && model->bundle.quantized ? 1 : 0;
}

tcaq_status tcaq_train(const tcaq_config* cfg, tcaq_model** out_model) {
  if (!cfg) return fail(TCAQ_ERR_ARGUMENT, "train: null config");
  return guarded([&] {
    const std::string path = cmd_train(cfg->cfg);
    if (out_model) {
      auto* m = new tcaq_model();
      try {
        m->bundle = load_bundle(path);
        m->loaded_from = path;
      } catch (...) {
        delete m;
        throw;
      }
      *out_model = m;
    }
  });
}

tcaq_status tcaq_quantize(const tcaq_config* cfg, const char* fp_checkpoint,
                          tcaq_model** out_model) {
  if (!cfg || !fp_checkpoint) return fail(TCAQ_ERR_ARGUMENT, "quantize: null argument");
  return guarded([&] {
    const std::string path = cmd_quantize(cfg->cfg, fp_checkpoint);
    if (out_model) {
      auto* m = new tcaq_model();
      try {
        m->bundle = load_bundle(path);
        m->loaded_from = path;
      } catch (...) {
        delete m;
        throw;
      }
      *out_model = m;
    }
  });
}

tcaq_status tcaq_sample(const tcaq_config* cfg, const char* checkpoint) {
  if (!cfg || !checkpoint) return fail(TCAQ_ERR_ARGUMENT, "sample: null argument");
  return guarded([&] { cmd_sample(cfg->cfg, checkpoint); });
}

tcaq_status tcaq_evaluate(const tcaq_config* cfg, const char* checkpoint) {
  if (!cfg || !checkpoint) return fail(TCAQ_ERR_ARGUMENT, "evaluate: null argument");
  return guarded([&] { cmd_evaluate(cfg->cfg, checkpoint); });
}

tcaq_status tcaq_ablate(const tcaq_config* cfg, const char* fp_checkpoint) {
  if (!cfg || !fp_checkpoint) return fail(TCAQ_ERR_ARGUMENT, "ablate: null argument");
  return guarded([&] { cmd_ablate(cfg->cfg, fp_checkpoint); });
}

}  // extern "C"
