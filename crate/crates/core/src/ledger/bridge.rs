//! Topic bridge between a pub/sub message bus and ledger channels.
//!
//! The publisher turns every message on a mapped topic into one transaction;
//! the subscriber turns every matching channel event back into one message.
//! Payload bytes pass through untouched in both directions.

use super::identity::Identity;
use super::store::{ChannelEvent, Ledger, Receipt, Subscription};
use super::LedgerError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicMessage {
    pub topic: String,
    pub payload: Vec<u8>,
}

/// Maps a bus topic to a `(channel, tx_type)` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub topic: String,
    pub channel: String,
    pub tx_type: String,
}

impl Route {
    pub fn new(topic: &str, channel: &str, tx_type: &str) -> Self {
        Self {
            topic: topic.to_string(),
            channel: channel.to_string(),
            tx_type: tx_type.to_string(),
        }
    }
}

/// Record of a message that could not be bridged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DroppedMessage {
    pub topic: String,
    pub payload_len: usize,
    pub reason: String,
}

pub struct BridgePublisher {
    identity: Identity,
    routes: Vec<Route>,
    dropped: Vec<DroppedMessage>,
}

impl BridgePublisher {
    pub fn new(identity: Identity, routes: Vec<Route>) -> Self {
        Self {
            identity,
            routes,
            dropped: Vec::new(),
        }
    }

    /// Submits `msg` as a transaction. Unmapped topics are dropped and
    /// audited, returning `Ok(None)`.
    pub fn publish(&mut self, ledger: &Ledger, msg: &TopicMessage) -> Result<Option<Receipt>, LedgerError> {
        let Some(route) = self.routes.iter().find(|r| r.topic == msg.topic) else {
            self.dropped.push(DroppedMessage {
                topic: msg.topic.clone(),
                payload_len: msg.payload.len(),
                reason: "unmapped topic".into(),
            });
            return Ok(None);
        };
        ledger
            .submit_transaction(&self.identity, &route.channel, &route.tx_type, msg.payload.clone())
            .map(Some)
    }

    pub fn dropped(&self) -> &[DroppedMessage] {
        &self.dropped
    }
}

pub struct BridgeSubscriber {
    routes: Vec<Route>,
    subscriptions: Vec<Subscription>,
}

impl BridgeSubscriber {
    /// Opens one filtered subscription per route.
    pub fn connect(ledger: &Ledger, routes: Vec<Route>) -> Result<Self, LedgerError> {
        let subscriptions = routes
            .iter()
            .map(|r| ledger.subscribe(&r.channel, Some(&r.tx_type)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { routes, subscriptions })
    }

    /// Message for `event`, or `None` when no route matches.
    pub fn deliver(&self, event: &ChannelEvent) -> Option<TopicMessage> {
        self.routes
            .iter()
            .find(|r| r.channel == event.channel && r.tx_type == event.tx_type)
            .map(|r| TopicMessage {
                topic: r.topic.clone(),
                payload: event.payload.clone(),
            })
    }

    /// Drains pending events into messages, ordered by channel height.
    pub fn poll(&self) -> Vec<TopicMessage> {
        let mut events: Vec<ChannelEvent> = self.subscriptions.iter().flat_map(|s| s.drain()).collect();
        events.sort_by(|a, b| (a.channel.as_str(), a.height).cmp(&(b.channel.as_str(), b.height)));
        events.iter().filter_map(|e| self.deliver(e)).collect()
    }
}
