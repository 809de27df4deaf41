// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pjh/layout.hpp"
#include "pjh/object_store.hpp"
#include "pjh/types.hpp"

namespace pjh {

class Heap;
class Runtime;

namespace pjo {

enum class FieldType : std::uint8_t { Scalar, String, EntityRef, EntityList };

struct EntityField {
  std::string name;
  FieldType type = FieldType::Scalar;
  std::uint16_t width = 8;  // scalars only
  std::string target;       // entity type of EntityRef / EntityList fields

  bool operator==(const EntityField&) const = default;
};

/// Persistable fields of an entity class. A subclass starts from a copy of
/// its parent's fields and key, then appends its own.
class EntityDescriptor {
 public:
  explicit EntityDescriptor(std::string name);
  EntityDescriptor(std::string name, const EntityDescriptor& parent);

  EntityDescriptor& scalar(std::string field, std::uint16_t width = 8);
  EntityDescriptor& string(std::string field);
  EntityDescriptor& reference(std::string field, std::string target);
  EntityDescriptor& list(std::string field, std::string target);
  /// Names the 8-byte scalar that identifies entities of this type.
  EntityDescriptor& key(std::string field);

  const std::string& name() const noexcept { return name_; }
  const std::string& parent() const noexcept { return parent_; }
  const std::vector<EntityField>& fields() const noexcept { return fields_; }
  const std::string& key_field() const noexcept { return key_; }

  std::optional<std::size_t> field_index(std::string_view field) const;
  /// Throws UnknownField.
  std::size_t index_of(std::string_view field) const;
  /// Object layout shared by the persistent copy and the application object.
  TypeDescriptor layout() const;

 private:
  EntityDescriptor& add(EntityField f);

  std::string name_;
  std::string parent_;
  std::vector<EntityField> fields_;
  std::string key_;
};

class EntityManager;
class Transaction;

/// Application-facing entity: an object in the volatile space plus its
/// state manager (state, dirty bitmap, shadow set and persistent binding).
///
/// Once committed the entity is deduplicated: string and list slots of the
/// application object point at the persistent arrays and scalars are read
/// from the binding. A later write creates a volatile shadow for that field
/// and never touches the heap before the next commit.
class ManagedEntity {
 public:
  enum class State { Transient, Managed, Committed };

  const EntityDescriptor& descriptor() const noexcept { return *desc_; }
  State state() const noexcept { return state_; }
  ObjRef app_object() const noexcept { return app_; }
  ObjRef binding() const noexcept { return binding_; }
  bool deduplicated() const noexcept { return dedup_; }
  bool removed() const noexcept { return removed_; }

  bool is_dirty(std::string_view field) const;
  std::size_t dirty_count() const noexcept;
  const std::vector<bool>& dirty_bitmap() const noexcept { return dirty_; }
  bool has_shadow(std::string_view field) const;
  std::size_t shadow_count() const noexcept;

  std::uint64_t get(std::string_view field) const;
  void set(std::string_view field, std::uint64_t value);
  std::string get_string(std::string_view field) const;
  void set_string(std::string_view field, std::string_view value);
  ManagedEntity* get_ref(std::string_view field) const;
  void set_ref(std::string_view field, ManagedEntity* target);
  std::vector<ManagedEntity*> get_list(std::string_view field) const;
  void set_list(std::string_view field, const std::vector<ManagedEntity*>& items);

  std::uint64_t key() const { return get(desc_->key_field()); }
  /// Raw word in the application object's slot for `field`.
  std::uint64_t app_slot(std::string_view field) const;

 private:
  friend class EntityManager;
  friend class Transaction;

  ManagedEntity(EntityManager& em, const EntityDescriptor& desc, ObjRef app);

  std::size_t checked_index(std::string_view field, FieldType type) const;
  /// Whether reads of field `i` go to the persistent copy.
  bool reads_binding(std::size_t i) const noexcept { return dedup_ && !shadow_[i]; }
  void touch(std::size_t i);

  EntityManager* em_;
  const EntityDescriptor* desc_;
  ObjRef app_;
  ObjRef binding_;
  State state_ = State::Transient;
  bool dedup_ = false;
  bool removed_ = false;
  std::vector<bool> dirty_;
  std::vector<bool> shadow_;
};

struct CommitStats {
  std::size_t entities = 0;
  std::size_t new_copies = 0;
  std::size_t undo_records = 0;
  std::size_t words_written = 0;
  std::size_t redirected = 0;
  std::size_t removed = 0;
  std::uint64_t fences = 0;
  std::uint64_t elapsed_ns = 0;
};

/// Flat transaction. Field values reach the heap only during commit: new
/// copies and arrays are written unlogged and fenced, then every dirty word
/// of an existing copy is undo-logged before it is overwritten. The log's
/// committed word is the commit point.
class Transaction {
 public:
  enum class Status { Active, Committing, Committed, RolledBack };

  std::uint64_t id() const noexcept { return id_; }
  Status status() const noexcept { return status_; }
  const std::vector<ManagedEntity*>& managed() const noexcept { return managed_; }
  const CommitStats& stats() const noexcept { return stats_; }

  /// Adds the entity, and every transient entity it references, to the
  /// management list and marks all their fields dirty.
  void persist(ManagedEntity& entity);
  /// Deletes a committed entity from its table at commit.
  void remove(ManagedEntity& entity);
  void commit();
  /// Drops the transaction. The heap is untouched because nothing was
  /// written yet; entities keep their dirty bits.
  void rollback();

  /// Points string and list slots of every committed entity at the
  /// persistent arrays; returns how many slots now reference the heap.
  std::size_t dedup_redirect();

 private:
  friend class EntityManager;
  Transaction(EntityManager& em, std::uint64_t id) : em_(&em), id_(id) {}

  void require_active() const;
  void enlist(ManagedEntity& e);
  void run_commit();

  EntityManager* em_;
  std::uint64_t id_;
  Status status_ = Status::Active;
  std::vector<ManagedEntity*> managed_;
  std::vector<ManagedEntity*> removals_;
  std::vector<ManagedEntity*> committed_;
  CommitStats stats_;
};

/// Produces entities of one enhanced type.
class EntityFactory {
 public:
  ManagedEntity& create() const;
  const EntityDescriptor& descriptor() const noexcept { return *desc_; }

 private:
  friend class EntityManager;
  EntityFactory(EntityManager& em, const EntityDescriptor& desc) : em_(&em), desc_(&desc) {}
  EntityManager* em_;
  const EntityDescriptor* desc_;
};

/// Entity layer over one heap. Each entity type has a persistent table,
/// bound to the root "pjo:<type>", that maps keys to persistent copies by
/// open addressing.
class EntityManager {
 public:
  static constexpr std::uint64_t kInitialTableCapacity = 16;
  static constexpr std::uint64_t kSegmentSlots = 4096;

  /// Persistent table of one entity type: a directory array of segment
  /// arrays that all have the same number of slots.
  struct TableView {
    ObjRef directory;
    std::uint64_t capacity = 0;
    std::uint64_t segment_slots = 0;
    std::vector<std::uint64_t> segments;

    bool empty() const noexcept { return capacity == 0; }
    std::uint64_t slot_address(std::uint64_t i) const {
      return segments[i / segment_slots] + kArrayHeaderSize + (i % segment_slots) * 8;
    }
  };

  EntityManager(Runtime& runtime, Heap& heap);
  ~EntityManager();
  EntityManager(const EntityManager&) = delete;
  EntityManager& operator=(const EntityManager&) = delete;

  /// Registers the type. Every referenced entity type must be enhanced
  /// already or be the type itself; otherwise UnregisteredType.
  EntityFactory enhance(const EntityDescriptor& desc);
  /// Registers a group of types that may reference one another.
  std::vector<EntityFactory> enhance(const std::vector<EntityDescriptor>& group);
  bool is_enhanced(std::string_view type) const;
  const EntityDescriptor& descriptor(std::string_view type) const;
  EntityFactory factory(std::string_view type);

  /// Starts a transaction; NestedTransaction while one is active. The
  /// returned reference stays valid until the next begin().
  Transaction& begin();
  Transaction* active() noexcept;

  /// The committed entity with this key, materialized on first access.
  ManagedEntity* find(std::string_view type, std::uint64_t key);
  std::vector<std::uint64_t> keys(std::string_view type) const;
  std::size_t count(std::string_view type) const;
  /// Canonical text of every committed entity of `type`, read only from
  /// the heap; used to compare durable states.
  std::map<std::uint64_t, std::string> dump(std::string_view type) const;
  /// Directory object of the type's table; null before the first insert.
  ObjRef table(std::string_view type) const;
  TableView table_view(std::string_view type) const;

  Heap& heap() noexcept { return *heap_; }
  Runtime& runtime() noexcept { return *runtime_; }

 private:
  friend class ManagedEntity;
  friend class Transaction;
  friend class EntityFactory;

  struct TypeInfo {
    EntityDescriptor desc;
    const TypeDescriptor* persistent = nullptr;
    const TypeDescriptor* app = nullptr;
  };

  void register_internal_types();
  TypeInfo& info(std::string_view type);
  const TypeInfo& info(std::string_view type) const;
  bool is_a(std::string_view type, std::string_view ancestor) const;

  ManagedEntity& create(const EntityDescriptor& desc);
  ManagedEntity* entity_for_app(std::uint64_t address) const;
  ManagedEntity* entity_for_binding(ObjRef copy);
  ManagedEntity* entity_for_word(std::uint64_t word);
  void rebuild_binding_index();

  std::uint64_t tombstone() const;
  std::uint64_t key_of_copy(const TypeInfo& t, std::uint64_t address) const;
  /// Slot index holding `key`, or the first free slot when `insert`.
  std::optional<std::uint64_t> probe(const TableView& table, const TypeInfo& t, std::uint64_t key,
                                     bool insert) const;
  TableView ensure_table(const TypeInfo& t, std::uint64_t extra);
  std::vector<std::uint64_t> live_copies(const TableView& table) const;
  std::string describe_copy(std::uint64_t address) const;

  Runtime* runtime_;
  Heap* heap_;
  std::map<std::string, std::unique_ptr<TypeInfo>, std::less<>> types_;
  const TypeDescriptor* string_type_ = nullptr;
  const TypeDescriptor* list_type_ = nullptr;
  const TypeDescriptor* table_type_ = nullptr;
  const TypeDescriptor* app_string_type_ = nullptr;
  const TypeDescriptor* app_list_type_ = nullptr;

  std::vector<std::unique_ptr<ManagedEntity>> entities_;
  std::unordered_map<std::uint64_t, ManagedEntity*> by_app_;
  std::unordered_map<std::uint64_t, ManagedEntity*> by_binding_;
  bool binding_index_stale_ = false;

  std::unique_ptr<Transaction> txn_;
  std::uint64_t next_txn_ = 1;
  std::uint64_t provider_id_ = 0;
};

}  // namespace pjo
}  // namespace pjh
