#include "attrprompt/metrics.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "attrprompt/error.hpp"

namespace attrprompt {

using nlohmann::json;

json epoch_record(const EpochStats& stats) {
  return {{"epoch", stats.epoch}, {"loss", stats.loss}, {"train_acc", stats.train_acc}};
}

json final_record(const FinalMetrics& m) {
  json doc = {{"test_acc", m.test_acc}};
  if (m.base_acc) doc["base_acc"] = *m.base_acc;
  if (m.novel_acc) doc["novel_acc"] = *m.novel_acc;
  if (m.hm) doc["hm"] = *m.hm;
  return doc;
}

json to_json(const EvalReport& r) {
  return {{"accuracy", r.accuracy},
          {"count", r.count},
          {"label_space", r.label_space},
          {"per_class_accuracy", r.per_class_accuracy},
          {"confusion", r.confusion}};
}

JsonlWriter::JsonlWriter(const std::filesystem::path& path) : path_(path) {
  std::ofstream out(path_, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path_.string());
}

void JsonlWriter::write(const json& record) {
  std::ofstream out(path_, std::ios::app);
  out << record.dump() << '\n';
  require(static_cast<bool>(out), ErrorKind::kIo, "failed writing " + path_.string());
}

}  // namespace attrprompt
