pub use modnet as core;
