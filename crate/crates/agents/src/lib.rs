pub mod events;
pub mod faults;
pub mod gateway;
pub mod intent;
pub mod memory;
pub mod metrics;
pub mod personas;
pub mod pipeline;
pub mod prompts;
pub mod render;
pub mod roles;
pub mod workspace;
