//! Offline sharding and online version rollout.

mod rolling;
mod sharding;

pub use self::rolling::{rolling_update, FaultHooks, InjectedCrash, NoFaults, RolloutError, RolloutReport, RolloutSpec, Step, UpdaterConfig};
pub use self::sharding::{auto_shard, plan_shards, shard_file_name, AutoShardError, FnSource, RecordSource, ShardFilesSource, ShardInfo, ShardPlan};
