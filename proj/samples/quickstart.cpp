// Build a tiny store, classify a query, then delete a label and classify again.

#include <iostream>

#include "knnkb/classifier.hpp"

int main() {
  using namespace knnkb;
  KnowledgeStore store(2);
  store.ingest(std::vector<float>{1.0f, 0.0f}, {"A"}, "s1");
  store.ingest(std::vector<float>{0.8f, 0.6f}, {"A"}, "s2");
  store.ingest(std::vector<float>{0.0f, 1.0f}, {"B"}, "s3");
  store.ingest(std::vector<float>{-0.6f, 0.8f}, {"B"}, "s4");

  AuditLog log;
  Classifier classifier(store, &log);
  const auto query = QueryVector::from_raw(std::vector<float>{0.6f, 0.8f});

  auto show = [&](const ClassificationResult& r) {
    std::cout << "prediction: " << (r.abstained ? "(none)" : store.label_name(*r.predicted_label_id)) << "\n";
    for (const auto& n : r.neighbors) {
      std::cout << "  #" << n.rank << " id " << n.record_id << " distance " << n.distance << "\n";
    }
  };

  show(classifier.classify(query, 3));
  std::cout << "deleted " << store.remove_label("A") << " records labeled A\n";
  show(classifier.classify(query, 3));
  std::cout << "audit entries: " << log.size() << "\n";
}
