pub mod clock;
pub mod crawler;
pub mod fetch;
pub mod links;
pub mod robots;
pub mod site;
pub mod link_index;
pub mod dataset;
pub mod network;
pub mod metrics;
pub mod report;
pub mod pipeline;
